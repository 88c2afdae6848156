// Typed client for the inference service. All backend traffic goes
// through these three documented endpoints.

export interface HealthResponse {
  status: string;
  backbone_dim: number;
  model_version: number;
}

export interface PredictionResponse {
  label: "COVID" | "NonCOVID";
  decision_value: number;
  elapsed_ms: number;
}

export interface FeatureGridResponse {
  rows: number;
  cols: number;
  grid: number[][];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

/** Map an error status to the inline message shown next to the form. */
export function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.code === "decode_error") return "Not a valid image — upload a PNG or JPEG scan.";
    if (err.code === "too_large") return "That file is too large to upload.";
    if (err.status === 415) return "Unsupported file type — upload a PNG or JPEG scan.";
    return `The service rejected the upload (${err.status}): ${err.message}`;
  }
  return "Could not reach the service. Check that it is running, then retry.";
}

async function parseJson(resp: Response): Promise<unknown> {
  const text = await resp.text();
  try {
    return JSON.parse(text) as unknown;
  } catch {
    throw new ApiError(resp.status, "bad_json", "service returned a non-JSON body");
  }
}

async function expectOk<T>(resp: Response): Promise<T> {
  const body = await parseJson(resp);
  if (!resp.ok) {
    const rec = body as { code?: string; message?: string };
    throw new ApiError(resp.status, rec.code ?? "error", rec.message ?? resp.statusText);
  }
  return body as T;
}

export async function fetchHealth(base = ""): Promise<HealthResponse> {
  return expectOk<HealthResponse>(await fetch(`${base}/health`));
}

function uploadBody(file: File): FormData {
  const form = new FormData();
  form.append("file", file, file.name);
  return form;
}

export async function postPredict(file: File, base = ""): Promise<PredictionResponse> {
  const resp = await fetch(`${base}/predict`, { method: "POST", body: uploadBody(file) });
  return expectOk<PredictionResponse>(resp);
}

export async function postFeatures(file: File, base = ""): Promise<FeatureGridResponse> {
  const resp = await fetch(`${base}/features`, { method: "POST", body: uploadBody(file) });
  return expectOk<FeatureGridResponse>(resp);
}
