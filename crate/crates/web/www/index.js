// Built with: wasm-pack build crates/web --target web --out-dir www/pkg
import init, { catalog, render_prompt, parse_reply, simulate } from "./pkg/informants_web.js";

const $ = (id) => document.getElementById(id);

function fail(target, err) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = String(err);
  target.appendChild(p);
}

function fill(select, values) {
  select.innerHTML = "";
  for (const [value, text] of values) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = text;
    select.appendChild(opt);
  }
}

function loadStudy() {
  const c = JSON.parse(catalog($("study").value));
  fill($("strategy"), c.strategies.map((s) => [s, s]));
  fill($("item"), c.items.map((i) => [i.item_id, `${i.item_id}: ${i.text}`]));
  showPrompt();
  $("chart").innerHTML = "";
  $("outliers").textContent = "";
}

function showPrompt() {
  const out = $("prompt");
  try {
    const r = JSON.parse(render_prompt($("study").value, $("strategy").value, $("item").value));
    out.innerHTML = "";
    for (const m of r.messages) {
      const role = document.createElement("div");
      role.className = "role";
      role.textContent = m.role;
      const pre = document.createElement("pre");
      pre.textContent = m.content;
      out.append(role, pre);
    }
  } catch (e) {
    fail(out, e);
  }
}

function scoreReply() {
  try {
    const r = JSON.parse(parse_reply($("study").value, $("item").value, $("reply").value));
    $("scored").textContent = JSON.stringify(r, null, 2);
  } catch (e) {
    $("scored").textContent = String(e);
  }
}

function barChart(bars) {
  const ns = "http://www.w3.org/2000/svg";
  const row = 26, labelW = 190, plotW = 420, pad = 24;
  const svg = document.createElementNS(ns, "svg");
  svg.setAttribute("width", labelW + plotW + 70);
  svg.setAttribute("height", bars.length * row * 2 + pad);
  const el = (name, attrs, text) => {
    const node = document.createElementNS(ns, name);
    for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
    if (text !== undefined) node.textContent = text;
    svg.appendChild(node);
  };
  bars.forEach((b, k) => {
    const y = k * row * 2 + 4;
    el("text", { x: 0, y: y + 16 }, b.scope);
    const series = [["model", b.model, "#3b6ea5"]];
    if (b.human !== null) series.push(["human", b.human, "#c77c2b"]);
    series.forEach(([who, v, color], j) => {
      const yy = y + j * (row - 4);
      el("rect", { x: labelW, y: yy, width: Math.max(1, v * plotW), height: row - 8, fill: color });
      el("text", { x: labelW + v * plotW + 4, y: yy + 13 }, `${who} ${v.toFixed(2)}`);
    });
  });
  return svg;
}

function runSimulation() {
  const chart = $("chart");
  try {
    const r = JSON.parse(
      simulate($("study").value, $("strategy").value, Number($("rate").value),
        Number($("informants").value), Number($("seed").value)),
    );
    chart.innerHTML = "";
    chart.appendChild(barChart(r.plot.bars));
    const words = r.outliers.map((o) => `${o.word} (${(o.error_share * 100).toFixed(0)}% of errors)`);
    $("outliers").textContent = `${r.informants} informants. Flagged words: ${words.length ? words.join(", ") : "none"}.`;
  } catch (e) {
    fail(chart, e);
  }
}

await init();
$("study").addEventListener("change", loadStudy);
$("strategy").addEventListener("change", showPrompt);
$("item").addEventListener("change", showPrompt);
$("score").addEventListener("click", scoreReply);
$("simulate").addEventListener("click", runSimulation);
$("rate").addEventListener("input", () => ($("rate-value").textContent = $("rate").value));
loadStudy();
