import init, { cost_curve, window_map, locate, attention_map } from "./pkg/sepvit_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(out, e) {
  out.textContent = String(e.message ?? e);
  out.classList.add("err");
}

function ok(out, text) {
  out.textContent = text;
  out.classList.remove("err");
}

function drawCost() {
  const canvas = $("cost"), g = canvas.getContext("2d"), out = $("cost-out");
  g.clearRect(0, 0, canvas.width, canvas.height);
  let rows;
  try {
    rows = cost_curve(num("cost-c"), num("cost-m"), num("cost-r"), num("cost-n"));
  } catch (e) {
    return fail(out, e);
  }
  const n = rows.length / 4;
  const max = Math.max(...Array.from({ length: n }, (_, i) => rows[4 * i + 2]));
  const pad = 40, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const x = (i) => pad + (n === 1 ? w / 2 : (i / (n - 1)) * w);
  const y = (v) => canvas.height - pad - (v / max) * h;
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad, w, h);
  for (const [col, colour] of [[1, "#1565c0"], [2, "#c62828"]]) {
    g.strokeStyle = colour;
    g.lineWidth = 2;
    g.beginPath();
    for (let i = 0; i < n; i++) {
      const px = x(i), py = y(rows[4 * i + col]);
      i ? g.lineTo(px, py) : g.moveTo(px, py);
    }
    g.stroke();
  }
  g.fillStyle = "#222";
  g.fillText("separable block", pad + 8, pad + 14);
  g.fillStyle = "#c62828";
  g.fillText("two window blocks", pad + 8, pad + 28);
  let text = "side        separable       two blocks   ratio\n";
  for (let i = 0; i < n; i++) {
    const [s, a, b, r] = rows.slice(4 * i, 4 * i + 4);
    text += `${String(s).padStart(4)} ${String(a).padStart(16)} ${String(b).padStart(16)}   ${r.toFixed(4)}\n`;
  }
  ok(out, text);
}

function gridParams() {
  return [num("grid-h"), num("grid-w"), num("grid-m"), num("grid-g")];
}

function drawGrid(highlight) {
  const canvas = $("grid"), g = canvas.getContext("2d"), out = $("grid-out");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const [hgt, wid, m, grp] = gridParams();
  let map;
  try {
    map = window_map(hgt, wid, m, grp);
  } catch (e) {
    return fail(out, e);
  }
  const cell = Math.max(1, Math.floor(Math.min(canvas.width / wid, canvas.height / hgt)));
  for (let py = 0; py < hgt; py++) {
    for (let px = 0; px < wid; px++) {
      const win = map[py * wid + px];
      const hue = (win * 137.5) % 360;
      const lit = highlight && win === highlight[0] ? 45 : 75;
      g.fillStyle = `hsl(${hue}, 60%, ${lit}%)`;
      g.fillRect(px * cell, py * cell, cell, cell);
    }
  }
  if (highlight) {
    g.strokeStyle = "#000";
    g.strokeRect(highlight[2] * cell, highlight[1] * cell, cell, cell);
  }
  if (!highlight) ok(out, `${new Set(map).size} windows of side ${m * grp}; click a pixel`);
}

function onGridClick(ev) {
  const canvas = $("grid"), out = $("grid-out");
  const [hgt, wid, m, grp] = gridParams();
  const cell = Math.max(1, Math.floor(Math.min(canvas.width / wid, canvas.height / hgt)));
  const r = canvas.getBoundingClientRect();
  const px = Math.floor((ev.clientX - r.left) / cell), py = Math.floor((ev.clientY - r.top) / cell);
  try {
    const [win, pos] = locate(hgt, wid, m, grp, py, px);
    drawGrid([win, py, px]);
    ok(out, `pixel (${py}, ${px}) -> window ${win}, token ${pos}`);
  } catch (e) {
    fail(out, e);
  }
}

function drawAttention() {
  const canvas = $("attn"), g = canvas.getContext("2d"), out = $("attn-out");
  g.clearRect(0, 0, canvas.width, canvas.height);
  const side = num("attn-s"), heads = num("attn-h"), m = num("attn-m");
  let a;
  try {
    a = attention_map(side, num("attn-c"), heads, m, BigInt(num("attn-seed")));
  } catch (e) {
    return fail(out, e);
  }
  const n = Math.round(Math.sqrt(a.length / heads));
  const size = Math.floor(Math.min(canvas.height - 20, (canvas.width - 10 * heads) / heads));
  const cell = size / n;
  for (let h = 0; h < heads; h++) {
    const block = a.subarray(h * n * n, (h + 1) * n * n);
    const peak = Math.max(...block);
    const ox = h * (size + 10);
    for (let i = 0; i < n; i++) {
      for (let j = 0; j < n; j++) {
        const v = block[i * n + j] / peak;
        g.fillStyle = `rgba(21, 101, 192, ${v})`;
        g.fillRect(ox + j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
      }
    }
    g.strokeStyle = "#999";
    g.strokeRect(ox, 0, size, size);
    g.fillStyle = "#222";
    g.fillText(`head ${h}`, ox, size + 14);
  }
  ok(out, `${n} windows; windows alternate between two textures in a checkerboard; rows sum to 1`);
}

await init();
for (const id of ["cost-c", "cost-m", "cost-r", "cost-n"]) $(id).addEventListener("input", drawCost);
for (const id of ["grid-h", "grid-w", "grid-m", "grid-g"]) $(id).addEventListener("input", () => drawGrid());
for (const id of ["attn-s", "attn-c", "attn-h", "attn-m", "attn-seed"]) $(id).addEventListener("input", drawAttention);
$("grid").addEventListener("click", onGridClick);
drawCost();
drawGrid();
drawAttention();
