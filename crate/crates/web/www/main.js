import init, { gesture_kinds, synth_clip, partition_heatmaps, attention_heatmaps } from "./pkg/gesture_web.js";

const $ = (id) => document.getElementById(id);
let clip = null;
let frame = 0;

function params() {
  return [$("kind").value, $("hand").value, Number($("seed").value) >>> 0, Number($("noise").value)];
}

function heatmap(canvas, data, n, offset = 0) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / n;
  let max = 0;
  for (let i = 0; i < n * n; i++) max = Math.max(max, data[offset + i]);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) {
      const v = max > 0 ? data[offset + r * n + c] / max : 0;
      const shade = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${shade},${shade},255)`;
      ctx.fillRect(c * cell, r * cell, cell, cell);
    }
  }
}

function drawFrame() {
  if (!clip) return;
  const canvas = $("skeleton");
  const ctx = canvas.getContext("2d");
  const j = clip.joints, coords = clip.coords, edges = clip.edges;
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (let i = 0; i < coords.length; i += 3) {
    minX = Math.min(minX, coords[i]); maxX = Math.max(maxX, coords[i]);
    minY = Math.min(minY, coords[i + 1]); maxY = Math.max(maxY, coords[i + 1]);
  }
  const span = Math.max(maxX - minX, maxY - minY) || 1;
  const px = (x) => 20 + ((x - minX) / span) * (canvas.width - 40);
  const py = (y) => canvas.height - 20 - ((y - minY) / span) * (canvas.height - 40);
  const base = frame * j * 3;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#555";
  for (let e = 0; e < edges.length; e += 2) {
    const a = base + edges[e] * 3, b = base + edges[e + 1] * 3;
    ctx.beginPath();
    ctx.moveTo(px(coords[a]), py(coords[a + 1]));
    ctx.lineTo(px(coords[b]), py(coords[b + 1]));
    ctx.stroke();
  }
  ctx.fillStyle = "#d33";
  for (let k = 0; k < j; k++) {
    ctx.beginPath();
    ctx.arc(px(coords[base + 3 * k]), py(coords[base + 3 * k + 1]), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  $("frameinfo").textContent = `frame ${frame + 1} / ${clip.frames}`;
  frame = (frame + 1) % clip.frames;
}

function generate() {
  $("error").textContent = "";
  try {
    const c = synth_clip(...params());
    clip = { joints: c.joints(), frames: c.frames(), coords: c.coords(), edges: c.edges() };
    c.free();
    frame = 0;
    const parts = partition_heatmaps(...params());
    for (let k = 0; k < 3; k++) heatmap($(`part${k}`), parts, clip.joints, k * clip.joints * clip.joints);
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function attend() {
  $("error").textContent = "";
  try {
    const maps = attention_heatmaps(...params(), Number($("netseed").value) >>> 0);
    const n = clip ? clip.joints : $("hand").value === "dhg22" ? 22 : 21;
    const units = maps.length / (n * n);
    const box = $("attention");
    box.innerHTML = "";
    for (let u = 0; u < units; u++) {
      const cell = document.createElement("div");
      cell.className = "cell";
      const canvas = document.createElement("canvas");
      canvas.width = canvas.height = 176;
      cell.append(canvas, Object.assign(document.createElement("div"), { textContent: `unit ${u + 1}` }));
      box.append(cell);
      heatmap(canvas, maps, n, u * n * n);
    }
  } catch (e) {
    $("error").textContent = String(e);
  }
}

await init();
for (const k of gesture_kinds().split(",")) $("kind").add(new Option(k, k));
$("generate").onclick = generate;
$("attend").onclick = () => { generate(); attend(); };
generate();
setInterval(drawFrame, 60);
