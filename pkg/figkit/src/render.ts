import * as echarts from "echarts";

import { MetricRow } from "./csv";
import { FigureRecipe } from "./recipes";

export interface Series {
  name: string;
  points: [number, number][];
}

/** Group rows into per-method curves, averaging repeated (x, method) cells. */
export function buildSeries(rows: MetricRow[], recipe: FigureRecipe): Series[] {
  const wanted = rows.filter(
    (r) =>
      r.scenario === recipe.scenario &&
      (recipe.blockRows ? r.block >= 0 : r.block === -1) &&
      (!recipe.methods || recipe.methods.includes(r.method)) &&
      !r.method.startsWith("error:"),
  );
  const byMethod = new Map<string, Map<number, number[]>>();
  for (const r of wanted) {
    const x = recipe.x === "block" ? r.block : r.snr_db;
    const v = recipe.transform ? recipe.transform(r.value) : r.value;
    if (recipe.logY && v <= 0) continue;
    let cells = byMethod.get(r.method);
    if (!cells) {
      cells = new Map();
      byMethod.set(r.method, cells);
    }
    const cell = cells.get(x);
    if (cell) cell.push(v);
    else cells.set(x, [v]);
  }
  const series: Series[] = [];
  for (const name of [...byMethod.keys()].sort()) {
    const cells = byMethod.get(name)!;
    const points: [number, number][] = [...cells.entries()]
      .map(([x, vs]): [number, number] => [x, vs.reduce((a, b) => a + b, 0) / vs.length])
      .sort((a, b) => a[0] - b[0]);
    series.push({ name, points });
  }
  if (series.length === 0) {
    throw new Error(
      `no rows match figure ${recipe.figure} (scenario '${recipe.scenario}', ` +
        `${recipe.blockRows ? "per-block" : "aggregate"} rows)`,
    );
  }
  return series;
}

/** Render one recipe to a deterministic SVG string. */
export function renderFigure(rows: MetricRow[], recipe: FigureRecipe): string {
  const series = buildSeries(rows, recipe);
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: 900,
    height: 560,
  });
  try {
    chart.setOption({
      animation: false,
      title: { text: `Fig. ${recipe.figure}: ${recipe.title}`, left: "center" },
      legend: { data: series.map((s) => s.name), bottom: 0 },
      grid: { left: 70, right: 30, top: 60, bottom: 70 },
      xAxis: { type: "value", name: recipe.xLabel, nameLocation: "middle", nameGap: 28 },
      yAxis: {
        type: recipe.logY ? "log" : "value",
        name: recipe.yLabel,
        nameLocation: "middle",
        nameGap: 50,
      },
      series: series.map((s) => ({
        name: s.name,
        type: "line",
        showSymbol: true,
        symbolSize: 5,
        data: s.points,
      })),
    });
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}
