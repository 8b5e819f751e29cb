/** Minimal SVG scene builder: scales, axes, step curves, bars, legends. */

export type Scale = (v: number) => number;

export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export const DEFAULT_FRAME: Frame = { width: 640, height: 440, left: 70, right: 20, top: 28, bottom: 64 };

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function log10Scale(d0: number, d1: number, r0: number, r1: number): Scale {
  const l0 = Math.log10(d0);
  const span = Math.log10(d1) - l0 || 1;
  return (v) => r0 + ((Math.log10(v) - l0) / span) * (r1 - r0);
}

export function niceTicks(lo: number, hi: number, n = 6): number[] {
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / n)));
  const err = span / n / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const s = mult * step;
  const start = Math.ceil(lo / s) * s;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += s) {
    ticks.push(Number(v.toPrecision(10)));
  }
  return ticks;
}

export function decadeTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.ceil(Math.log10(lo)); e <= Math.floor(Math.log10(hi)) + 1e-9; e++) {
    ticks.push(Math.pow(10, e));
  }
  return ticks;
}

const esc = (s: string) => s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export class SvgCanvas {
  private parts: string[] = [];

  constructor(public frame: Frame = DEFAULT_FRAME) {}

  path(d: string, stroke: string, width = 1.5, dash = ""): void {
    const dd = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(`<path d="${d}" fill="none" stroke="${stroke}" stroke-width="${width}"${dd}/>`);
  }

  rect(x: number, y: number, w: number, h: number, fill: string, cls = ""): void {
    const c = cls ? ` class="${cls}"` : "";
    this.parts.push(
      `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${w.toFixed(2)}" height="${h.toFixed(2)}" fill="${fill}"${c}/>`);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = ""): void {
    const dd = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${x1.toFixed(2)}" y1="${y1.toFixed(2)}" x2="${x2.toFixed(2)}" y2="${y2.toFixed(2)}" stroke="${stroke}" stroke-width="${width}"${dd}/>`);
  }

  text(x: number, y: number, content: string, opts: { anchor?: string; size?: number; rotate?: boolean; cls?: string } = {}): void {
    const anchor = opts.anchor ?? "middle";
    const size = opts.size ?? 12;
    const rot = opts.rotate ? ` transform="rotate(-90 ${x} ${y})"` : "";
    const cls = opts.cls ? ` class="${opts.cls}"` : "";
    this.parts.push(
      `<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" text-anchor="${anchor}" font-size="${size}" font-family="sans-serif"${rot}${cls}>${esc(content)}</text>`);
  }

  stepPath(points: { x: number; y: number }[], sx: Scale, sy: Scale): string {
    let d = "";
    let prevY = NaN;
    for (const [i, p] of points.entries()) {
      const px = sx(p.x);
      const py = sy(p.y);
      if (i === 0) {
        d = `M${px.toFixed(2)},${py.toFixed(2)}`;
      } else {
        d += `H${px.toFixed(2)}V${py.toFixed(2)}`;
      }
      prevY = py;
    }
    return d;
  }

  xAxis(ticks: number[], sx: Scale, label: string, fmt: (v: number) => string = String): void {
    const { left, right, width, height, bottom } = this.frame;
    const y0 = height - bottom;
    this.line(left, y0, width - right, y0, "#000");
    for (const t of ticks) {
      const x = sx(t);
      this.line(x, y0, x, y0 + 5, "#000");
      this.text(x, y0 + 18, fmt(t), { size: 11 });
    }
    this.text((left + width - right) / 2, y0 + 38, label, { size: 13, cls: "xlabel" });
  }

  yAxis(ticks: number[], sy: Scale, label: string, fmt: (v: number) => string = String): void {
    const { left, top, height, bottom } = this.frame;
    this.line(left, top, left, height - bottom, "#000");
    for (const t of ticks) {
      const y = sy(t);
      this.line(left - 5, y, left, y, "#000");
      this.text(left - 8, y + 4, fmt(t), { anchor: "end", size: 11 });
    }
    this.text(18, (top + height - bottom) / 2, label, { rotate: true, size: 13, cls: "ylabel" });
  }

  legend(entries: { label: string; color: string }[]): void {
    const { width, right, top } = this.frame;
    entries.forEach((e, i) => {
      const y = top + 14 + i * 16;
      this.line(width - right - 150, y - 4, width - right - 126, y - 4, e.color, 2.5);
      this.text(width - right - 120, y, e.label, { anchor: "start", size: 11, cls: "legend" });
    });
  }

  footer(content: string): void {
    this.text(this.frame.left, this.frame.height - 8, content,
      { anchor: "start", size: 9, cls: "footer" });
  }

  title(content: string): void {
    this.text(this.frame.width / 2, 16, content, { size: 14 });
  }

  render(): string {
    const { width, height } = this.frame;
    return [
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`,
      `<rect x="0" y="0" width="${width}" height="${height}" fill="#ffffff"/>`,
      ...this.parts,
      "</svg>",
      "",
    ].join("\n");
  }
}
