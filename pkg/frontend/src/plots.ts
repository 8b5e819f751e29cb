/** Figure renderers over loaded run artifacts. Re-running on the same inputs
 * produces byte-identical SVG files. */

import * as fs from "fs";
import * as path from "path";

import { ccdfPoints, cdfPoints } from "./ecdf";
import { RunArtifact } from "./loader";
import {
  DEFAULT_FRAME, PALETTE, SvgCanvas, decadeTicks, linearScale, log10Scale, niceTicks,
} from "./svg";

export interface FigureInfo {
  type: string;
  path: string;
  runs: string[];
  config_hashes: string[];
}

function footerText(runs: RunArtifact[]): string {
  const hashes = runs.map((r) => `${r.name}:${r.configHash}`).join("  ");
  return `config ${hashes}`;
}

function writeFigure(outPath: string, svg: string): void {
  fs.mkdirSync(path.dirname(path.resolve(outPath)), { recursive: true });
  fs.writeFileSync(outPath, svg);
}

export function plotLatencyCcdf(runs: RunArtifact[], outPath: string): FigureInfo {
  if (runs.length === 0 || runs.every((r) => r.latencyMs.length === 0)) {
    throw new Error("latency CCDF needs at least one run with latency samples");
  }
  const withSamples = runs.filter((r) => r.latencyMs.length > 0);
  const lo = Math.min(...withSamples.map((r) => Math.min(...r.latencyMs)));
  const hi = Math.max(...withSamples.map((r) => Math.max(...r.latencyMs)));
  const yMin = 1 / Math.max(...withSamples.map((r) => r.latencyMs.length));
  const canvas = new SvgCanvas();
  const f = DEFAULT_FRAME;
  const sx = linearScale(0, hi * 1.05, f.left, f.width - f.right);
  const sy = log10Scale(yMin, 1, f.height - f.bottom, f.top);
  canvas.title("URLLC latency CCDF");
  canvas.xAxis(niceTicks(0, hi * 1.05), sx, "Latency (ms)", (v) => v.toFixed(1));
  canvas.yAxis(decadeTicks(yMin, 1), sy, "CCDF", (v) => v.toExponential(0));
  // 1 ms latency budget reference
  canvas.line(sx(1.0), f.top, sx(1.0), f.height - f.bottom, "#888", 1, "4 3");
  canvas.text(sx(1.0) + 4, f.top + 12, "1 ms", { anchor: "start", size: 10 });
  const legend: { label: string; color: string }[] = [];
  withSamples.forEach((run, i) => {
    const color = PALETTE[i % PALETTE.length];
    const pts = ccdfPoints(run.latencyMs).filter((p) => p.y >= yMin);
    canvas.path(canvas.stepPath(pts, sx, sy), color, 1.8);
    legend.push({ label: run.name, color });
  });
  canvas.legend(legend);
  canvas.footer(footerText(withSamples));
  writeFigure(outPath, canvas.render());
  return {
    type: "latency_ccdf", path: outPath,
    runs: withSamples.map((r) => r.name),
    config_hashes: withSamples.map((r) => r.configHash),
  };
}

export type CdfMetric = "cell_tput" | "user_tput";

const CDF_LABEL: Record<CdfMetric, string> = {
  cell_tput: "Cell throughput (Mbps)",
  user_tput: "eMBB user throughput (Mbps)",
};

export function plotCdf(metric: CdfMetric, runs: RunArtifact[], outPath: string): FigureInfo {
  const series = runs.map((r) => ({
    run: r,
    values: metric === "cell_tput" ? r.cellTputMbps : r.userTputMbps,
  })).filter((s) => s.values.length > 0);
  if (series.length === 0) {
    throw new Error(`${metric}: no runs carry samples for this metric`);
  }
  const lo = Math.min(...series.map((s) => Math.min(...s.values)));
  const hi = Math.max(...series.map((s) => Math.max(...s.values)));
  const canvas = new SvgCanvas();
  const f = DEFAULT_FRAME;
  const sx = linearScale(Math.min(0, lo), hi * 1.05, f.left, f.width - f.right);
  const sy = linearScale(0, 1, f.height - f.bottom, f.top);
  canvas.title(metric === "cell_tput" ? "Cell throughput CDF" : "eMBB user throughput CDF");
  canvas.xAxis(niceTicks(Math.min(0, lo), hi * 1.05), sx, CDF_LABEL[metric],
    (v) => v.toFixed(0));
  canvas.yAxis(niceTicks(0, 1, 5), sy, "CDF", (v) => v.toFixed(1));
  const legend: { label: string; color: string }[] = [];
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    canvas.path(canvas.stepPath(cdfPoints(s.values), sx, sy), color, 1.8);
    legend.push({ label: s.run.name, color });
  });
  canvas.legend(legend);
  canvas.footer(footerText(series.map((s) => s.run)));
  writeFigure(outPath, canvas.render());
  return {
    type: `${metric}_cdf`, path: outPath,
    runs: series.map((s) => s.run.name),
    config_hashes: series.map((s) => s.run.configHash),
  };
}

export function plotMuGain(runs: RunArtifact[], outPath: string): FigureInfo {
  if (runs.length === 0) {
    throw new Error("MU gain plot needs at least one run");
  }
  const canvas = new SvgCanvas();
  const f = DEFAULT_FRAME;
  const plotH = f.height - f.top - f.bottom;
  const sy = linearScale(0, 1, f.height - f.bottom, f.top);
  canvas.title("MU pairing success and throughput gain");
  canvas.yAxis(niceTicks(0, 1, 5), sy, "MU success ratio / normalized gain",
    (v) => v.toFixed(1));
  const groupW = (f.width - f.left - f.right) / runs.length;
  const barW = Math.min(46, groupW / 3);
  const gains = runs.map((r) => Number(r.summary.mu_gain_vs_su ?? 0));
  const gainScale = Math.max(1, ...gains);
  runs.forEach((run, i) => {
    const x0 = f.left + i * groupW + groupW / 2;
    const ratio = Number(run.summary.mu_success_ratio ?? 0);
    const gain = gains[i] / gainScale;
    const hRatio = ratio * plotH;
    const hGain = gain * plotH;
    canvas.rect(x0 - barW - 3, f.height - f.bottom - hRatio, barW, hRatio,
      PALETTE[0], "bar-success");
    canvas.rect(x0 + 3, f.height - f.bottom - hGain, barW, hGain, PALETTE[1], "bar-gain");
    canvas.text(x0 - barW / 2 - 3, f.height - f.bottom - hRatio - 4, ratio.toFixed(2),
      { size: 10 });
    canvas.text(x0, f.height - f.bottom + 18, run.name, { size: 11 });
  });
  canvas.legend([
    { label: "MU success ratio", color: PALETTE[0] },
    { label: "MU gain vs SU (norm.)", color: PALETTE[1] },
  ]);
  canvas.text((f.left + f.width - f.right) / 2, f.height - f.bottom + 38, "Run",
    { size: 13, cls: "xlabel" });
  canvas.footer(footerText(runs));
  writeFigure(outPath, canvas.render());
  return {
    type: "mu_gain", path: outPath,
    runs: runs.map((r) => r.name),
    config_hashes: runs.map((r) => r.configHash),
  };
}

export function renderAll(runs: RunArtifact[], outDir: string): FigureInfo[] {
  const figures: FigureInfo[] = [];
  figures.push(plotLatencyCcdf(runs, path.join(outDir, "latency_ccdf.svg")));
  figures.push(plotCdf("cell_tput", runs, path.join(outDir, "cell_tput_cdf.svg")));
  if (runs.some((r) => r.userTputMbps.length > 0)) {
    figures.push(plotCdf("user_tput", runs, path.join(outDir, "user_tput_cdf.svg")));
  }
  figures.push(plotMuGain(runs, path.join(outDir, "mu_gain.svg")));
  const manifest = { figures };
  fs.writeFileSync(path.join(outDir, "figures_manifest.json"),
    JSON.stringify(manifest, null, 2) + "\n");
  return figures;
}
