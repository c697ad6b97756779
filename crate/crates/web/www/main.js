import init, { waveform, g2Scan, simulateCell } from "./pkg/rodsim_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Minimal line/point plot; series = [{x, y, color, points}]
function plot(canvas, series) {
  const g = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  g.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x), ys = series.flatMap((s) => s.y);
  if (!xs.length) return;
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = Math.min(0, ...ys), y1 = Math.max(...ys) || 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  g.fillStyle = "#333";
  g.fillText(x0.toPrecision(3), pad, h - 10);
  g.fillText(x1.toPrecision(3), w - pad - 30, h - 10);
  g.fillText(y1.toPrecision(3), 2, pad);
  for (const s of series) {
    g.strokeStyle = g.fillStyle = s.color;
    if (s.points) {
      s.x.forEach((x, i) => g.fillRect(px(x) - 2, py(s.y[i]) - 2, 4, 4));
    } else {
      g.beginPath();
      s.x.forEach((x, i) => (i ? g.lineTo(px(x), py(s.y[i])) : g.moveTo(px(x), py(s.y[i]))));
      g.stroke();
    }
  }
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    $(out).textContent = "error: " + e;
  }
}

function drawWaveform() {
  guard("wo", () => {
    const v = JSON.parse(waveform(num("wa"), num("wt"), num("wm"), 3 * num("wt"), 300));
    plot($("wc"), [{ x: v.times_s, y: v.current_pa, color: "#06c" }]);
    $("wo").textContent = "FWHM " + (v.fwhm_s == null ? "n/a" : v.fwhm_s.toFixed(3) + " s");
  });
}

function scan() {
  guard("go", () => {
    const rows = JSON.parse(g2Scan($("gm").value, num("glo"), num("ghi"), 6, num("gn"), 7));
    plot($("gc"), [{ x: rows.map((r) => r.mu), y: rows.map((r) => r.g2), color: "#c60", points: true }]);
    $("go").textContent = rows.map((r) => `mu ${r.mu.toFixed(3)}  g2 ${r.g2.toFixed(3)} ± ${r.sd.toFixed(3)}`).join("\n");
  });
}

function cell() {
  $("co").textContent = "running...";
  setTimeout(() => guard("co", () => {
    const v = JSON.parse(simulateCell(num("ct"), num("cq"), num("ch"), num("cc"), num("cs")));
    const series = [];
    for (const [h, c] of [[v.dark, "#888"], [v.single, "#c00"]]) {
      if (!h) continue;
      series.push({ x: h.centers_pa, y: h.probability, color: c, points: true });
      series.push({ x: h.fit_x_pa, y: h.fit_y, color: c });
    }
    plot($("cc2"), series);
    const f = (x) => (x == null ? "n/a" : x.toFixed(4));
    $("co").textContent =
      `trials: ${v.zero_herald} no herald, ${v.single_herald} one, ${v.multi_herald} several\n` +
      `P(response | herald) ${f(v.p_sph)}   P(response | dark) ${f(v.p_dn)}\n` +
      `eta ${f(v.eta)} ± ${f(v.eta_std_err)}   Welch one-tailed p ${f(v.welch_p)}`;
  }), 10);
}

await init();
$("wgo").onclick = drawWaveform;
$("ggo").onclick = scan;
$("cgo").onclick = cell;
drawWaveform();
