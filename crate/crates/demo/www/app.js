import init, { explore_allocation, strategy_sweep, validation_targets } from "./pkg/hcclean_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(out, e) {
  out.innerHTML = "";
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = String(e);
  out.appendChild(p);
}

function drawAllocation(view) {
  const c = $("a-canvas");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const cells = view.problem.cells;
  const pool = view.problem.pool;
  const picked = (sol) => new Set(sol.Ok ? sol.Ok.chosen : []);
  const greedy = picked(view.greedy);
  const oracle = picked(view.oracle);
  const cx = (i) => 40 + (i * (c.width - 80)) / Math.max(cells.length - 1, 1);
  const hx = (i) => 40 + (i * (c.width - 80)) / Math.max(pool.length - 1, 1);
  pool.forEach((h, i) => {
    g.strokeStyle = greedy.has(h.id) ? "rgba(0,90,200,.6)" : "rgba(0,0,0,.08)";
    for (const cell of h.coverable) {
      const j = cells.indexOf(cell);
      g.beginPath();
      g.moveTo(hx(i), 60);
      g.lineTo(cx(j), 240);
      g.stroke();
    }
  });
  g.font = "12px sans-serif";
  g.textAlign = "center";
  pool.forEach((h, i) => {
    g.fillStyle = greedy.has(h.id) ? "#0a5ac8" : "#999";
    g.beginPath();
    g.arc(hx(i), 50, 10, 0, 2 * Math.PI);
    g.fill();
    if (oracle.has(h.id)) {
      g.strokeStyle = "#e07000";
      g.lineWidth = 3;
      g.stroke();
      g.lineWidth = 1;
    }
    g.fillStyle = "#222";
    g.fillText(`${h.id} (${h.cost})`, hx(i), 25);
  });
  cells.forEach((_, j) => {
    g.fillStyle = "#555";
    g.fillRect(cx(j) - 4, 240, 8, 8);
  });
  g.textAlign = "left";
  g.fillText("filled: greedy pick   orange ring: exhaustive optimum", 10, 290);
}

function runAllocation() {
  const out = $("a-out");
  try {
    const view = JSON.parse(
      explore_allocation(BigInt(num("a-seed")), num("a-humans"), num("a-cells"), num("a-density"), num("a-max")),
    );
    drawAllocation(view);
    const show = (name, s) =>
      s.Ok ? `${name}: ${s.Ok.chosen.join(", ")}  cost ${s.Ok.cost}` : `${name}: ${s.Err}`;
    out.textContent = `${show("greedy", view.greedy)}\n${show("oracle", view.oracle)}`;
  } catch (e) {
    fail(out, e);
  }
}

function drawSweep(points) {
  const c = $("s-canvas");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const maxX = points[points.length - 1].agent_error || 1;
  const x = (v) => 50 + (v / maxX) * (c.width - 80);
  const y = (v) => c.height - 30 - v * (c.height - 60);
  g.strokeStyle = "#ccc";
  g.strokeRect(50, 30, c.width - 80, c.height - 60);
  g.fillStyle = "#222";
  g.font = "12px sans-serif";
  g.fillText("1.0", 20, y(1) + 4);
  g.fillText("0.0", 20, y(0) + 4);
  g.fillText(`agent error 0 .. ${maxX}`, c.width / 2 - 40, c.height - 8);
  const line = (key, color, label, row) => {
    g.strokeStyle = color;
    g.lineWidth = 2;
    g.beginPath();
    points.forEach((p, i) => {
      const v = p[key] ?? 0;
      if (i === 0) g.moveTo(x(p.agent_error), y(v));
      else g.lineTo(x(p.agent_error), y(v));
    });
    g.stroke();
    g.fillStyle = color;
    g.fillText(label, 60, 20 + row * 14);
  };
  line("quantitative", "#0a5ac8", "quantitative", 0);
  line("qualitative", "#e07000", "qualitative", 1);
  g.lineWidth = 1;
}

function runSweep() {
  const out = $("s-out");
  try {
    const points = JSON.parse(
      strategy_sweep(num("s-rows"), num("s-human"), num("s-agent"), num("s-steps"), BigInt(num("s-seed"))),
    );
    drawSweep(points);
    out.textContent = points
      .map(
        (p) =>
          `agent error ${p.agent_error.toFixed(2)}  quantitative ${(p.quantitative ?? 0).toFixed(3)} (${p.quantitative_tasks} tasks)  qualitative ${(p.qualitative ?? 0).toFixed(3)} (${p.qualitative_tasks} tasks)`,
      )
      .join("\n");
  } catch (e) {
    fail(out, e);
  }
}

function table(headers, rows, selected) {
  const t = document.createElement("table");
  const head = t.insertRow();
  for (const h of headers) {
    const th = document.createElement("th");
    th.textContent = h;
    head.appendChild(th);
  }
  rows.forEach((r, i) => {
    const tr = t.insertRow();
    if (selected && selected(i)) tr.className = "sel";
    for (const v of r) tr.insertCell().textContent = v;
  });
  return t;
}

function runTargets() {
  const out = $("v-out");
  try {
    const view = JSON.parse(validation_targets($("v-mode").value, num("v-budget"), $("v-suspects").value));
    out.innerHTML = "";
    out.appendChild(
      table(
        ["cell", "factors", "validated"],
        view.candidates.map((c) => [c.cell, c.factors.join(", "), c.selected ? "yes" : ""]),
        (i) => view.candidates[i].selected,
      ),
    );
    out.appendChild(
      table(
        ["factor", "type", "correct", "validated", "quality", "rank"],
        view.factors.map((f) => [f.factor, f.kind, f.correct, f.validated, f.quality ?? "untested", f.rank ?? "-"]),
      ),
    );
  } catch (e) {
    fail(out, e);
  }
}

await init();
$("a-run").onclick = runAllocation;
$("s-run").onclick = runSweep;
$("v-run").onclick = runTargets;
runAllocation();
runSweep();
runTargets();
