/**
 * Typed client for the clutter-analysis HTTP API.
 *
 * Every call goes through an injected fetch-like function so tests can
 * substitute an in-memory transport. Non-2xx responses throw ApiFailure
 * carrying the server's error envelope ({code, message}) when present.
 */

export type Fidelity = "capture" | "high";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface RleMask {
  size: [number, number]; // [height, width]
  start: number;          // value of the first run, 0 or 1
  runs: number[];         // row-major run lengths, alternating values
}

export interface ObjectDoc {
  id: number;
  label: string;
  q: number;
  beta: number;
  gamma: number;
  s_aes_sub: number;
  s_content_sub: number;
  is_clutter: boolean;
  overridden: boolean;
  mask_rle: RleMask;
  suggestions_kind: "boundary" | "interior";
}

export interface SessionDoc {
  id: string;
  width: number;
  height: number;
  objects: ObjectDoc[];
  previews: Record<string, boolean>;
}

export interface SuggestionsDoc {
  kind: "boundary" | "interior";
  suggestions: string[];
}

export class ApiFailure extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiFailure";
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) throw await toFailure(resp);
  return (await resp.json()) as T;
}

async function toFailure(resp: Response): Promise<ApiFailure> {
  try {
    const body = (await resp.json()) as { code?: string; message?: string };
    return new ApiFailure(resp.status, body.code ?? "error",
                          body.message ?? `request failed (${resp.status})`);
  } catch {
    return new ApiFailure(resp.status, "error", `request failed (${resp.status})`);
  }
}

export async function createSession(fetchFn: FetchLike,
                                    pngBytes: Uint8Array): Promise<SessionDoc> {
  const resp = await fetchFn("/sessions", {
    method: "POST",
    headers: { "Content-Type": "image/png" },
    // fresh copy pins the ArrayBuffer backing BodyInit expects
    body: new Uint8Array(pngBytes),
  });
  return expectJson<SessionDoc>(resp);
}

export async function flipObject(fetchFn: FetchLike, sessionId: string,
                                 objectId: number): Promise<ObjectDoc> {
  const resp = await fetchFn(
    `/sessions/${sessionId}/objects/${objectId}/flip`, { method: "POST" });
  return expectJson<ObjectDoc>(resp);
}

export async function getSuggestions(fetchFn: FetchLike, sessionId: string,
                                     objectId: number): Promise<SuggestionsDoc> {
  const resp = await fetchFn(`/sessions/${sessionId}/objects/${objectId}/suggestions`);
  return expectJson<SuggestionsDoc>(resp);
}

export async function cleanSession(fetchFn: FetchLike, sessionId: string,
                                   fidelity: Fidelity): Promise<{ preview_url: string }> {
  const resp = await fetchFn(`/sessions/${sessionId}/clean`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ fidelity }),
  });
  return expectJson<{ preview_url: string }>(resp);
}

export async function fetchPng(fetchFn: FetchLike, url: string): Promise<Uint8Array> {
  const resp = await fetchFn(url);
  if (!resp.ok) throw await toFailure(resp);
  return new Uint8Array(await resp.arrayBuffer());
}
