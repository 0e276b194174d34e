import init, { wasm_fitness, wasm_front, wasm_simulate } from './pkg/evoflow_demo.js';

const plane = document.getElementById('plane');
const hvCanvas = document.getElementById('hv');
const out = document.getElementById('out');
const PAD = 36;

let points = [
  { perf: 0.9, cost: 0.8 }, { perf: 0.7, cost: 0.35 }, { perf: 0.55, cost: 0.5 },
  { perf: 0.3, cost: 0.1 }, { perf: 0.6, cost: 0.7 },
];
let maxCost = 1;

const toX = (c, w) => PAD + (c / maxCost) * (w - 2 * PAD);
const toY = (p, h) => h - PAD - p * (h - 2 * PAD);

function axes(ctx, w, h, xLabel, yLabel) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = '#999';
  ctx.beginPath();
  ctx.moveTo(PAD, PAD / 2); ctx.lineTo(PAD, h - PAD); ctx.lineTo(w - PAD / 2, h - PAD);
  ctx.stroke();
  ctx.fillStyle = '#555';
  ctx.fillText(xLabel, w - PAD - 40, h - 10);
  ctx.save(); ctx.translate(12, PAD + 40); ctx.rotate(-Math.PI / 2); ctx.fillText(yLabel, 0, 0); ctx.restore();
}

function draw() {
  const ctx = plane.getContext('2d');
  const { width: w, height: h } = plane;
  axes(ctx, w, h, 'cost', 'perf');
  if (points.length === 0) { out.textContent = 'no points'; return; }
  const phi = Number(document.getElementById('phi').value);
  let fit, front;
  try {
    fit = JSON.parse(wasm_fitness(JSON.stringify(points), phi));
    front = JSON.parse(wasm_front(JSON.stringify(points)));
  } catch (e) { out.textContent = String(e); return; }
  const onFront = new Set(front.front);

  // Staircase bounding the dominated area.
  const stair = [...onFront].map(i => points[i]).sort((a, b) => a.cost - b.cost);
  ctx.fillStyle = 'rgba(52, 152, 219, 0.15)';
  ctx.beginPath();
  let best = 0;
  ctx.moveTo(toX(stair[0].cost, w), toY(0, h));
  for (let i = 0; i < stair.length; i++) {
    best = Math.max(best, stair[i].perf);
    const next = i + 1 < stair.length ? stair[i + 1].cost : maxCost;
    ctx.lineTo(toX(stair[i].cost, w), toY(best, h));
    ctx.lineTo(toX(next, w), toY(best, h));
  }
  ctx.lineTo(toX(maxCost, w), toY(0, h));
  ctx.closePath();
  ctx.fill();

  const fmax = Math.max(...fit.fitness, 1e-300);
  points.forEach((p, i) => {
    const x = toX(p.cost, w), y = toY(p.perf, h);
    const r = 4 + 6 * (fit.fitness[i] / fmax);
    ctx.beginPath(); ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.strokeStyle = '#2c3e50';
    if (onFront.has(i)) { ctx.fillStyle = '#2980b9'; ctx.fill(); } else { ctx.stroke(); }
    if (i === fit.worst) {
      ctx.strokeStyle = '#c0392b'; ctx.lineWidth = 2;
      ctx.beginPath(); ctx.moveTo(x - 8, y - 8); ctx.lineTo(x + 8, y + 8); ctx.moveTo(x + 8, y - 8); ctx.lineTo(x - 8, y + 8);
      ctx.stroke(); ctx.lineWidth = 1;
    }
  });
  out.textContent = `hypervolume ${front.hypervolume.toFixed(4)}\n` +
    points.map((p, i) => `${i}: perf ${p.perf.toFixed(3)} cost ${p.cost.toFixed(3)} F ${fit.fitness[i].toExponential(3)}`).join('\n');
}

function drawHv(run) {
  const ctx = hvCanvas.getContext('2d');
  const { width: w, height: h } = hvCanvas;
  axes(ctx, w, h, 'step', 'HV');
  const last = run.checkpoints[run.checkpoints.length - 1] || 1;
  ctx.strokeStyle = '#27ae60';
  ctx.beginPath();
  run.hypervolume.forEach((v, i) => {
    const x = PAD + (run.checkpoints[i] / last) * (w - 2 * PAD);
    const y = h - PAD - v * (h - 2 * PAD);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
}

plane.addEventListener('click', ev => {
  const r = plane.getBoundingClientRect();
  const cost = ((ev.clientX - r.left - PAD) / (plane.width - 2 * PAD)) * maxCost;
  const perf = (plane.height - PAD - (ev.clientY - r.top)) / (plane.height - 2 * PAD);
  if (ev.shiftKey) {
    let k = -1, d = Infinity;
    points.forEach((p, i) => {
      const e = Math.hypot(p.cost / maxCost - cost / maxCost, p.perf - perf);
      if (e < d) { d = e; k = i; }
    });
    if (k >= 0) points.splice(k, 1);
  } else if (cost >= 0 && cost <= maxCost && perf >= 0 && perf <= 1) {
    points.push({ perf, cost });
  }
  draw();
});

document.getElementById('phi').addEventListener('input', draw);
document.getElementById('clear').addEventListener('click', () => { points = []; maxCost = 1; draw(); });
document.getElementById('eliminate').addEventListener('click', () => {
  if (points.length < 2) return;
  const fit = JSON.parse(wasm_fitness(JSON.stringify(points), Number(document.getElementById('phi').value)));
  points.splice(fit.worst, 1);
  draw();
});
document.getElementById('run').addEventListener('click', () => {
  out.textContent = 'running...';
  setTimeout(() => {
    const seed = Number(document.getElementById('seed').value);
    const steps = Number(document.getElementById('steps').value);
    try {
      const run = JSON.parse(wasm_simulate(seed, steps, Math.max(1, Math.round(steps / 10))));
      maxCost = Math.max(...run.points.map(p => p.cost), 1e-12) * 1.05;
      points = run.points;
      drawHv(run);
      draw();
      out.textContent = `accepted ${run.accepted} offspring\n` + out.textContent;
    } catch (e) { out.textContent = String(e); }
  }, 0);
});

await init();
draw();
