import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { loadRun } from "../src/loader";

const FIXTURES = path.join(__dirname, "fixtures");

describe("loadRun", () => {
  it("loads a complete run directory", () => {
    const run = loadRun(path.join(FIXTURES, "run_mups"));
    expect(run.name).toBe("mups");
    expect(run.configHash).toBe("mupshash16");
    expect(run.latencyMs.length).toBe(63);
    expect(run.cellTputMbps.length).toBe(101);
    expect(run.userTputMbps).toEqual([4.0, 6.0, 9.0]);
    expect(run.pairingEvents[0].outcome).toBe("paired");
  });

  it("diagnoses a missing column by name", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "badrun-"));
    const src = path.join(FIXTURES, "run_mups");
    for (const f of fs.readdirSync(src)) {
      fs.copyFileSync(path.join(src, f), path.join(dir, f));
    }
    fs.writeFileSync(path.join(dir, "cell_tput.csv"), "tick,cell\n1,0\n");
    expect(() => loadRun(dir)).toThrow(/cell_tput\.csv: missing column 'mbps'/);
  });

  it("diagnoses a missing file", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "emptyrun-"));
    expect(() => loadRun(dir)).toThrow(/summary\.json: missing/);
  });
});
