// Upload form and result view: one in-flight request at a time, inline
// errors, and a strict rule that the page shows exactly what the
// service returned (the label is never re-derived from the score).

import {
  describeError,
  fetchHealth,
  postFeatures,
  postPredict,
  PredictionResponse,
} from "./api";
import { renderHeatmap } from "./heatmap";

export type Phase = "idle" | "uploading" | "done" | "error";

export interface UiState {
  phase: Phase;
  file: File | null;
  response: PredictionResponse | null;
  error: string | null;
}

interface Elements {
  fileInput: HTMLInputElement;
  dropZone: HTMLElement;
  submitBtn: HTMLButtonElement;
  retryBtn: HTMLButtonElement;
  errorBox: HTMLElement;
  resultPanel: HTMLElement;
  labelBadge: HTMLElement;
  score: HTMLElement;
  latency: HTMLElement;
  heatmapPanel: HTMLElement;
  heatmapCanvas: HTMLCanvasElement;
  healthLine: HTMLElement;
}

function grab(doc: Document): Elements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    fileInput: byId<HTMLInputElement>("file-input"),
    dropZone: byId("drop-zone"),
    submitBtn: byId<HTMLButtonElement>("submit-btn"),
    retryBtn: byId<HTMLButtonElement>("retry-btn"),
    errorBox: byId("error-box"),
    resultPanel: byId("result-panel"),
    labelBadge: byId("label-badge"),
    score: byId("score"),
    latency: byId("latency"),
    heatmapPanel: byId("heatmap-panel"),
    heatmapCanvas: byId<HTMLCanvasElement>("heatmap"),
    healthLine: byId("health-line"),
  };
}

export interface App {
  selectFile(file: File): void;
  submit(): Promise<void>;
  getState(): UiState;
  refreshHealth(): Promise<void>;
}

export function createApp(doc: Document): App {
  const els = grab(doc);
  const state: UiState = { phase: "idle", file: null, response: null, error: null };

  function render(): void {
    els.submitBtn.disabled = state.phase === "uploading" || state.file === null;
    els.submitBtn.textContent = state.phase === "uploading" ? "Analyzing…" : "Analyze scan";
    els.retryBtn.hidden = state.phase !== "error";

    els.errorBox.hidden = state.error === null;
    els.errorBox.textContent = state.error ?? "";

    const done = state.phase === "done" && state.response !== null;
    els.resultPanel.hidden = !done;
    if (done && state.response) {
      const r = state.response;
      els.labelBadge.textContent = r.label;
      els.labelBadge.className = `badge ${r.label === "COVID" ? "badge-positive" : "badge-negative"}`;
      els.score.textContent = r.decision_value.toFixed(4);
      els.latency.textContent = `${r.elapsed_ms.toFixed(1)} ms`;
    }
  }

  function selectFile(file: File): void {
    state.file = file;
    state.error = null;
    if (state.phase !== "uploading") state.phase = "idle";
    els.dropZone.querySelector(".filename")!.textContent = file.name;
    render();
  }

  async function submit(): Promise<void> {
    if (state.file === null || state.phase === "uploading") return;
    state.phase = "uploading";
    state.error = null;
    state.response = null;
    els.heatmapPanel.hidden = true;
    render();

    try {
      state.response = await postPredict(state.file);
      state.phase = "done";
      render();
    } catch (err) {
      state.phase = "error";
      state.error = describeError(err);
      render();
      return;
    }

    // best effort: the heatmap panel stays hidden if features are unavailable
    try {
      const features = await postFeatures(state.file);
      els.heatmapPanel.hidden = !renderHeatmap(els.heatmapCanvas, features.grid);
    } catch (err) {
      console.warn("feature grid unavailable", err);
      els.heatmapPanel.hidden = true;
    }
  }

  async function refreshHealth(): Promise<void> {
    try {
      const health = await fetchHealth();
      els.healthLine.textContent =
        `service ${health.status} — ${health.backbone_dim}-dim backbone, ` +
        `model v${health.model_version}`;
    } catch {
      els.healthLine.textContent = "service unreachable";
    }
  }

  els.dropZone.addEventListener("click", () => els.fileInput.click());
  els.dropZone.addEventListener("dragover", (ev) => ev.preventDefault());
  els.dropZone.addEventListener("drop", (ev) => {
    ev.preventDefault();
    const file = ev.dataTransfer?.files?.[0];
    if (file) selectFile(file);
  });
  els.fileInput.addEventListener("change", () => {
    const file = els.fileInput.files?.[0];
    if (file) selectFile(file);
  });
  els.submitBtn.addEventListener("click", () => void submit());
  els.retryBtn.addEventListener("click", () => void submit());

  render();
  return { selectFile, submit, getState: () => ({ ...state }), refreshHealth };
}
