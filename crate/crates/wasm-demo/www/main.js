import init, { certify, rs_scan, optimize_measure } from "./pkg/parisi_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f5fa8", "#c0392b"];

// Line plot of one or more series sharing an x axis; `marks` are vertical guides.
function plot(id, xs, series, marks = []) {
  const c = $(id);
  const dpr = window.devicePixelRatio || 1;
  c.width = c.clientWidth * dpr;
  c.height = c.clientHeight * dpr;
  const ctx = c.getContext("2d");
  ctx.scale(dpr, dpr);
  const w = c.clientWidth, h = c.clientHeight, pad = 36;
  ctx.clearRect(0, 0, w, h);
  const all = series.flat().filter(Number.isFinite);
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const X = (x) => pad + (x - x0) / (x1 - x0) * (w - pad - 8);
  const Y = (y) => h - pad + (lo - y) / (hi - lo) * (h - pad - 8);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 8, w - pad - 8, h - pad - 8);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toPrecision(4), 2, 16);
  ctx.fillText(lo.toPrecision(4), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(x1.toPrecision(3), w - 40, h - pad + 14);
  ctx.strokeStyle = "#e0a000";
  for (const m of marks) {
    ctx.beginPath(); ctx.moveTo(X(m), 8); ctx.lineTo(X(m), h - pad); ctx.stroke();
  }
  series.forEach((ys, s) => {
    ctx.strokeStyle = COLORS[s % COLORS.length];
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(X(xs[i]), Y(y)) : ctx.moveTo(X(xs[i]), Y(y))));
    ctx.stroke();
  });
}

function show(text, error = false) {
  $("summary").textContent = text;
  $("summary").className = error ? "err" : "";
}

// Runs `f` after the status text has painted; wasm calls block the page.
function busy(label, f) {
  $("status").textContent = label + "…";
  setTimeout(() => {
    const t = performance.now();
    try { f(); } finally {
      $("status").textContent = `${label}: ${((performance.now() - t) / 1000).toFixed(2)} s`;
    }
  }, 20);
}

function parse(json) {
  const v = JSON.parse(json);
  if (v.error) { show(v.error, true); return null; }
  return v;
}

function runCertify() {
  const v = parse(certify($("model").value, $("measure").value, num("nx"), num("nt")));
  if (!v) return;
  const atoms = v.atoms.map((a) => a.q);
  show([
    `upper bound   ${v.upper.toFixed(10)}`,
    `lower bound   ${v.lower.toFixed(10)}`,
    `gap           ${v.gap.toExponential(3)}`,
    `argmin g      ${v.argmin_g.toFixed(4)}`,
    `atoms         ${v.atoms.map((a) => `${a.q.toFixed(4)}:${a.w.toFixed(4)}`).join("  ")}`,
    ...v.warnings.map((w) => `warning: ${w}`),
  ].join("\n"));
  plot("g", v.g.t, [v.g.value], atoms);
  plot("m2", v.second_moment.t, [v.second_moment.value], atoms);
  plot("phi", v.phi0.x, [v.phi0.phi, v.phi0.dphi]);
}

function runScan() {
  const v = parse(rs_scan($("model").value, num("points"), num("nx")));
  if (!v) return;
  show(`best replica-symmetric q = ${v.best_q.toFixed(4)}, P = ${v.best_upper.toFixed(10)}`);
  plot("rs", v.q, [v.upper], [v.best_q]);
  $("measure").value = JSON.stringify({ atoms: [{ q: v.best_q, w: 1 }] });
}

function runOptimize() {
  const v = parse(optimize_measure($("model").value, num("k"), num("budget"), num("nx"), num("nt")));
  if (!v) return;
  $("measure").value = JSON.stringify({ atoms: v.atoms });
  runCertify();
  $("summary").textContent += `\noptimizer     k=${v.k}, ${v.evaluations} evaluations, converged=${v.converged}`;
}

await init();
$("certify").onclick = () => busy("certify", runCertify);
$("scan").onclick = () => busy("scan", runScan);
$("optimize").onclick = () => busy("optimize", runOptimize);
show("Ready. Edit the model or measure and press a button.");
