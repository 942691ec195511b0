/** Minimal dependency-free SVG charts: a two-series line and a bar row. */

const SVG_NS = "http://www.w3.org/2000/svg";

export interface Series {
  name: string;
  color: string;
  points: Array<[number, number]>; // [x, y]
}

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) {
    el.setAttribute(k, v);
  }
  return el;
}

export function lineChart(series: Series[], width = 560, height = 160): SVGSVGElement {
  const svg = svgEl("svg", {
    viewBox: `0 0 ${width} ${height}`,
    width: String(width),
    height: String(height),
    class: "line-chart",
  });
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) {
    return svg;
  }
  const xs = all.map((p) => p[0]);
  const ys = all.map((p) => p[1]);
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  const y1 = Math.max(...ys, 1);
  const pad = 8;
  const sx = (x: number) =>
    x1 === x0 ? width / 2 : pad + ((x - x0) / (x1 - x0)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - (y / y1) * (height - 2 * pad);
  for (const s of series) {
    if (s.points.length === 1) {
      const only = s.points[0]!;
      svg.appendChild(svgEl("circle", {
        cx: String(sx(only[0])), cy: String(sy(only[1])), r: "3",
        fill: s.color, "data-series": s.name,
      }));
      continue;
    }
    svg.appendChild(svgEl("polyline", {
      points: s.points.map(([x, y]) => `${sx(x).toFixed(1)},${sy(y).toFixed(1)}`).join(" "),
      fill: "none",
      stroke: s.color,
      "stroke-width": "2",
      "data-series": s.name,
    }));
  }
  return svg;
}

export function barChart(values: number[], width = 560, height = 120): SVGSVGElement {
  const svg = svgEl("svg", {
    viewBox: `0 0 ${width} ${height}`,
    width: String(width),
    height: String(height),
    class: "bar-chart",
  });
  if (values.length === 0) {
    return svg;
  }
  const max = Math.max(...values, 1);
  const gap = 2;
  const barWidth = (width - gap * values.length) / values.length;
  values.forEach((v, i) => {
    const h = (v / max) * (height - 16);
    const bar = svgEl("rect", {
      x: String(i * (barWidth + gap)),
      y: String(height - h),
      width: String(Math.max(barWidth, 1)),
      height: String(h),
      class: "bar",
      "data-count": String(v),
    });
    bar.appendChild(svgEl("title", {})).textContent = String(v);
    svg.appendChild(bar);
  });
  return svg;
}
