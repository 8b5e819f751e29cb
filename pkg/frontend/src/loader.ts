/** Run-directory ingestion with fail-fast schema checks. */

import * as fs from "fs";
import * as path from "path";

export interface PairingEvent {
  tick: number;
  cell: number;
  urllcUser: number;
  outcome: string;
  partner: string;
  chordal: number;
  angleDeg: number;
  prbs: number;
}

export interface RunArtifact {
  dir: string;
  name: string;
  summary: Record<string, unknown>;
  configHash: string;
  latencyMs: number[];
  cellTputMbps: number[];
  userTputMbps: number[];
  pairingEvents: PairingEvent[];
}

interface Csv {
  header: string[];
  rows: string[][];
}

function parseCsv(text: string): Csv {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    return { header: [], rows: [] };
  }
  const header = lines[0].split(",").map((h) => h.trim());
  const rows = lines.slice(1).map((l) => l.split(",").map((c) => c.trim()));
  return { header, rows };
}

function readCsv(dir: string, file: string, required: string[]): Csv {
  const full = path.join(dir, file);
  if (!fs.existsSync(full)) {
    throw new Error(`${file}: missing from run directory ${dir}`);
  }
  const csv = parseCsv(fs.readFileSync(full, "utf-8"));
  for (const col of required) {
    if (!csv.header.includes(col)) {
      throw new Error(`${file}: missing column '${col}'`);
    }
  }
  return csv;
}

function column(csv: Csv, name: string): string[] {
  const idx = csv.header.indexOf(name);
  return csv.rows.map((r) => r[idx]);
}

export function loadRun(dir: string): RunArtifact {
  const summaryPath = path.join(dir, "summary.json");
  if (!fs.existsSync(summaryPath)) {
    throw new Error(`summary.json: missing from run directory ${dir}`);
  }
  const summary = JSON.parse(fs.readFileSync(summaryPath, "utf-8"));
  const latency = readCsv(dir, "latency_samples.csv",
    ["packet_id", "arrival_tick", "latency_ms", "harq_tx_count"]);
  const tput = readCsv(dir, "cell_tput.csv", ["tick", "cell", "mbps"]);
  const pairing = readCsv(dir, "pairing_events.csv",
    ["tick", "cell", "urllc_user", "outcome", "partner", "chordal", "angle_deg", "prbs"]);
  const events: PairingEvent[] = pairing.rows.map((r) => ({
    tick: Number(r[0]),
    cell: Number(r[1]),
    urllcUser: Number(r[2]),
    outcome: r[3],
    partner: r[4],
    chordal: Number(r[5]),
    angleDeg: Number(r[6]),
    prbs: Number(r[7]),
  }));
  const userTput = Array.isArray(summary.user_tput_mbps)
    ? (summary.user_tput_mbps as number[]).map(Number)
    : [];
  return {
    dir,
    name: typeof summary.run === "string" ? (summary.run as string) : path.basename(dir),
    summary,
    configHash: String(summary.config_hash ?? "unknown"),
    latencyMs: column(latency, "latency_ms").map(Number),
    cellTputMbps: column(tput, "mbps").map(Number),
    userTputMbps: userTput,
    pairingEvents: events,
  };
}
