import init, { Session } from "./pkg/ali_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("plot");
const ctx = canvas.getContext("2d");
let session = null;
let frame = null;

function status(text) {
  $("status").textContent = text;
}

// viridis-like ramp from t = 0 (purple) to t = 1 (yellow)
function colour(t) {
  const stops = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
  const x = Math.min(Math.max(t, 0), 1) * (stops.length - 1);
  const i = Math.min(Math.floor(x), stops.length - 2);
  const f = x - i;
  const c = stops[i].map((v, k) => Math.round(v + f * (stops[i + 1][k] - v)));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

function bounds(points) {
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (let i = 0; i < points.length; i += 3) {
    x0 = Math.min(x0, points[i + 1]);
    x1 = Math.max(x1, points[i + 1]);
    y0 = Math.min(y0, points[i + 2]);
    y1 = Math.max(y1, points[i + 2]);
  }
  const span = Math.max(x1 - x0, y1 - y0) * 1.1 || 1;
  const cx = (x0 + x1) / 2;
  const cy = (y0 + y1) / 2;
  const s = canvas.width / span;
  return (x, y) => [(x - cx) * s + canvas.width / 2, canvas.height / 2 - (y - cy) * s];
}

function draw() {
  const points = session.points();
  frame = frame || bounds(points);
  ctx.fillStyle = "white";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < points.length; i += 3) {
    const [px, py] = frame(points[i + 1], points[i + 2]);
    ctx.fillStyle = colour(points[i]);
    ctx.beginPath();
    ctx.arc(px, py, 2, 0, 2 * Math.PI);
    ctx.fill();
  }
  const samples = 60;
  const curves = session.curves(Number($("pairs").value), samples);
  ctx.strokeStyle = "rgba(200, 30, 30, 0.7)";
  ctx.lineWidth = 1.2;
  for (let c = 0; c < curves.length; c += 2 * samples) {
    ctx.beginPath();
    for (let s = 0; s < samples; s++) {
      const [px, py] = frame(curves[c + 2 * s], curves[c + 2 * s + 1]);
      if (s === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    }
    ctx.stroke();
  }
}

function generate() {
  try {
    session = new Session($("kind").value, BigInt($("seed").value), Number($("noise").value));
  } catch (e) {
    status(String(e));
    return;
  }
  frame = null;
  $("emd").textContent = "";
  draw();
  status("untrained interpolant");
}

function train() {
  try {
    const loss = session.train(Number($("steps").value));
    draw();
    status(`iteration ${session.iteration()}, generator loss ${loss.toFixed(4)}`);
  } catch (e) {
    $("auto").checked = false;
    status(String(e));
  }
}

function keepTraining() {
  if (!$("auto").checked) return;
  train();
  requestAnimationFrame(keepTraining);
}

function evaluate() {
  const rows = session.emdTable();
  const table = document.createElement("table");
  table.innerHTML = "<tr><th>t</th><th>EMD</th></tr>";
  let sum = 0;
  const shown = Math.max(1, Math.floor(rows.length / 2 / 12));
  for (let i = 0; i < rows.length; i += 2) {
    sum += rows[i + 1];
    if ((i / 2) % shown === 0) {
      table.insertRow().innerHTML = `<td>${rows[i].toFixed(3)}</td><td>${rows[i + 1].toFixed(4)}</td>`;
    }
  }
  table.insertRow().innerHTML = `<th>mean</th><th>${(sum / (rows.length / 2)).toFixed(4)}</th>`;
  $("emd").replaceChildren(table);
}

await init();
$("generate").onclick = generate;
$("train").onclick = train;
$("auto").onchange = keepTraining;
$("evaluate").onclick = evaluate;
$("pairs").onchange = draw;
$("kind").onchange = generate;
generate();
