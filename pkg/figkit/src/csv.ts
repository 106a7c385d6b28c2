import * as fs from "node:fs";
import Papa from "papaparse";

export interface MetricRow {
  scenario: string;
  snr_db: number;
  block: number;
  method: string;
  trial: number;
  value: number;
}

export const REQUIRED_COLUMNS = ["scenario", "snr_db", "block", "method", "trial", "value"] as const;

/** Load and validate one or more harness CSV files (fixed schema). */
export function loadRows(paths: string[]): MetricRow[] {
  const rows: MetricRow[] = [];
  for (const path of paths) {
    const text = fs.readFileSync(path, "utf8");
    const parsed = Papa.parse<Record<string, string>>(text.trim(), {
      header: true,
      skipEmptyLines: true,
    });
    const fields = parsed.meta.fields ?? [];
    for (const col of REQUIRED_COLUMNS) {
      if (!fields.includes(col)) {
        throw new Error(`${path}: missing column '${col}'`);
      }
    }
    if (parsed.data.length === 0) {
      throw new Error(`${path}: no data rows`);
    }
    for (const raw of parsed.data) {
      rows.push({
        scenario: raw.scenario,
        method: raw.method,
        snr_db: Number(raw.snr_db),
        block: Number(raw.block),
        trial: Number(raw.trial),
        value: Number(raw.value),
      });
    }
  }
  return rows;
}
