export interface FigureRecipe {
  figure: number;
  title: string;
  scenario: string;
  /** x column: per-block curves or SNR sweeps */
  x: "block" | "snr_db";
  /** true: use per-block rows (block >= 0); false: aggregate rows (block == -1) */
  blockRows: boolean;
  logY: boolean;
  xLabel: string;
  yLabel: string;
  /** applied per raw value before averaging over trials */
  transform?: (v: number) => number;
  /** optional series whitelist */
  methods?: string[];
}

export const RECIPES: Record<number, FigureRecipe> = {
  2: {
    figure: 2,
    title: "Beamspace power profile of one user cluster",
    scenario: "beam_profile",
    x: "block",
    blockRows: true,
    logY: true,
    xLabel: "beamspace bin",
    yLabel: "average power",
  },
  3: {
    figure: 3,
    title: "Temporal-basis fit of the strongest beamspace bin",
    scenario: "cebem_fit",
    x: "block",
    blockRows: true,
    logY: false,
    xLabel: "slot",
    yLabel: "Re(coefficient)",
  },
  4: {
    figure: 4,
    title: "Central DOA tracking over blocks",
    scenario: "doa_track",
    x: "block",
    blockRows: true,
    logY: false,
    xLabel: "block",
    yLabel: "central DOA (deg)",
  },
  5: {
    figure: 5,
    title: "DOA tracking error vs SNR",
    scenario: "doa_track",
    x: "snr_db",
    blockRows: false,
    logY: true,
    xLabel: "SNR (dB)",
    yLabel: "DOA MSE (rad^2)",
    transform: (v) => v * v,
  },
  6: {
    figure: 6,
    title: "Spatial-signature size tracking",
    scenario: "as_track",
    x: "block",
    blockRows: true,
    logY: false,
    xLabel: "block",
    yLabel: "signature size (bins)",
    methods: ["taylor", "dft_search", "reference"],
  },
  7: {
    figure: 7,
    title: "Uplink channel MSE vs SNR",
    scenario: "ul_mse",
    x: "snr_db",
    blockRows: false,
    logY: true,
    xLabel: "SNR (dB)",
    yLabel: "normalized MSE",
  },
  8: {
    figure: 8,
    title: "Downlink channel MSE vs SNR",
    scenario: "dl_mse",
    x: "snr_db",
    blockRows: false,
    logY: true,
    xLabel: "SNR (dB)",
    yLabel: "normalized MSE",
  },
  9: {
    figure: 9,
    title: "Downlink QPSK BER vs SNR",
    scenario: "ber",
    x: "snr_db",
    blockRows: false,
    logY: true,
    xLabel: "SNR (dB)",
    yLabel: "BER",
  },
};
