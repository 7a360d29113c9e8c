// Typed client for the session service HTTP API.

export interface CandidateAsset {
  slider_index: number
  vector: number[]
  embedding?: number[]
  asset_url?: string
  segments?: [number, number, string][]
}

export interface SessionCreated {
  session_id: string
  step: number
  max_steps: number
  dim: number
  reference_url: string | null
  candidates: CandidateAsset[]
}

export interface ChoiceAccepted {
  session_id: string
  step: number
  remaining_steps: number
  chosen_index: number
  chosen_point: number[]
  segment: { endpoint_plus: number[]; endpoint_ei: number[] }
  candidates: CandidateAsset[]
}

export interface CreateSessionRequest {
  dim: number
  seed?: number
  endpoint_mode?: 'random' | 'table_means' | 'explicit'
  labels?: [string, string]
  endpoints?: [number[], number[]]
  max_steps?: number
  n_points?: number
}

export type ChoiceResult =
  | { kind: 'advanced'; body: ChoiceAccepted }
  | { kind: 'conflict' }
  | { kind: 'complete' }
  | { kind: 'rejected'; detail: string }

export class SessionApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  async createSession(body: CreateSessionRequest): Promise<SessionCreated> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    })
    if (resp.status !== 201) {
      throw new Error(`session creation failed (${resp.status}): ${await resp.text()}`)
    }
    return (await resp.json()) as SessionCreated
  }

  async submitChoice(sessionId: string, sliderIndex: number): Promise<ChoiceResult> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/choice`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ slider_index: sliderIndex }),
    })
    if (resp.status === 200) return { kind: 'advanced', body: (await resp.json()) as ChoiceAccepted }
    if (resp.status === 409) return { kind: 'conflict' }
    if (resp.status === 410) return { kind: 'complete' }
    return { kind: 'rejected', detail: await resp.text() }
  }

  // Raw text is kept verbatim so exports can be saved byte-for-byte.
  async exportSession(sessionId: string, mode = 'last_chosen'): Promise<{ raw: string; body: unknown }> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/export?mode=${encodeURIComponent(mode)}`,
    )
    if (resp.status !== 200) {
      throw new Error(`export failed (${resp.status}): ${await resp.text()}`)
    }
    const raw = await resp.text()
    return { raw, body: JSON.parse(raw) }
  }
}
