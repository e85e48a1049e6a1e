// Thin typed client for the simulation service. Frames come back as raw
// PNG bytes so callers can both display and byte-compare them.

export interface MeshPayload {
  vertices: number[][];
  rest: number[][];
  faces: number[][];
  handles: number[];
  targets: number[][];
}

export interface DragSummary {
  energy: number;
  iterations: number;
  max_displacement: number;
}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

async function check(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let code = `HTTP${resp.status}`;
    let message = resp.statusText;
    try {
      const body = await resp.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(code, message, resp.status);
  }
  return resp;
}

export class Client {
  constructor(private base: string, private fetchFn: typeof fetch = fetch) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await check(await this.fetchFn(this.base + path, init));
    return (await resp.json()) as T;
  }

  createSession(checkpoint: string): Promise<{ session_id: string }> {
    return this.json("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ checkpoint }),
    });
  }

  getMesh(sid: string): Promise<MeshPayload> {
    return this.json(`/sessions/${sid}/mesh`);
  }

  drag(sid: string, drags: { vertex: number; target: number[] }[],
       T: number): Promise<DragSummary> {
    return this.json(`/sessions/${sid}/drag`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ drags, T }),
    });
  }

  setTime(sid: string, t: number): Promise<{ t: number }> {
    return this.json(`/sessions/${sid}/time`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ t }),
    });
  }

  async render(sid: string, w: number, h: number, cam: string): Promise<ArrayBuffer> {
    const q = new URLSearchParams({ w: String(w), h: String(h), cam });
    const resp = await check(
      await this.fetchFn(`${this.base}/sessions/${sid}/render?${q}`));
    return resp.arrayBuffer();
  }

  async deleteSession(sid: string): Promise<void> {
    await check(await this.fetchFn(`${this.base}/sessions/${sid}`,
                                   { method: "DELETE" }));
  }
}
