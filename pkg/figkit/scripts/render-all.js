#!/usr/bin/env node
// Render every figure from the bundled fixtures into ./figures/.
const { execFileSync } = require("node:child_process");
const path = require("node:path");
const fs = require("node:fs");

const root = path.resolve(__dirname, "..");
const cli = path.join(root, "dist", "cli.js");
const fixtures = path.join(root, "fixtures");
const outDir = path.join(root, "figures");
fs.mkdirSync(outDir, { recursive: true });

const inputs = {
  2: ["trace.csv"],
  3: ["trace.csv"],
  4: ["doa_track.csv"],
  5: ["doa_track_sweep.csv"],
  6: ["as_track.csv"],
  7: ["ul_mse.csv"],
  8: ["dl_mse.csv"],
  9: ["ber.csv"],
};

for (const [figure, files] of Object.entries(inputs)) {
  const args = [
    cli, "render", "--figure", figure,
    "--in", ...files.map((f) => path.join(fixtures, f)),
    "--out", path.join(outDir, `fig${figure}.svg`),
  ];
  execFileSync("node", args, { stdio: "inherit" });
}
