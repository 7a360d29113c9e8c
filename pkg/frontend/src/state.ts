// Session UI state machine.
//
// All interaction rules live here, DOM-free, so they can be exercised
// directly by tests:
//   * the slider detent is the single source of the submitted index;
//   * reference audio and candidate looping are mutually exclusive;
//   * with playback annotations, the audible candidate switches only at the
//     next annotation boundary; without them, switching is immediate;
//   * at most one choice submission is in flight; 409 offers retry, 410
//     flips to the export view;
//   * after each accepted step the slider resets to the neutral detent.

import { CandidateAsset, ChoiceAccepted, CreateSessionRequest, SessionApi } from './api.js'
import { AudioEngine } from './audio.js'

export const N_DETENTS = 20
export const NEUTRAL_DETENT = 9

export interface HistoryEntry {
  step: number
  chosenIndex: number
  chosenPoint: number[]
}

export interface UiSessionState {
  sessionId: string
  step: number
  maxSteps: number
  dim: number
  referenceUrl: string | null
  candidates: CandidateAsset[]
  activeIndex: number
  audibleIndex: number
  looping: boolean
  position: number
  referencePlaying: boolean
  submitting: boolean
  completed: boolean
  history: HistoryEntry[]
}

export type SubmitOutcome =
  | { kind: 'advanced'; step: number }
  | { kind: 'conflict' } // another writer; retry later
  | { kind: 'complete' } // budget exhausted; export view
  | { kind: 'suppressed' } // a submit is already in flight
  | { kind: 'rejected'; detail: string }
  | { kind: 'network-error'; message: string }

const LOOP_FALLBACK_SECONDS = 8

export class SessionController {
  state: UiSessionState | null = null
  exportRaw: string | null = null
  exportBody: unknown = null
  private exportFetch: Promise<{ raw: string; body: unknown }> | null = null

  constructor(
    private api: SessionApi,
    private audio: AudioEngine,
  ) {}

  private get st(): UiSessionState {
    if (!this.state) throw new Error('no active session')
    return this.state
  }

  async create(request: CreateSessionRequest): Promise<UiSessionState> {
    const created = await this.api.createSession(request)
    this.state = {
      sessionId: created.session_id,
      step: created.step,
      maxSteps: created.max_steps,
      dim: created.dim,
      referenceUrl: created.reference_url ?? null,
      candidates: created.candidates,
      activeIndex: NEUTRAL_DETENT,
      audibleIndex: NEUTRAL_DETENT,
      looping: false,
      position: 0,
      referencePlaying: false,
      submitting: false,
      completed: false,
      history: [],
    }
    this.exportRaw = null
    this.exportBody = null
    this.audio.preload(created.candidates.map((c) => c.asset_url ?? null))
    return this.state
  }

  /** Annotation boundaries of the audible candidate, ascending. */
  private boundaries(): number[] {
    const spans = this.st.candidates[this.st.audibleIndex]?.segments
    if (!spans || spans.length === 0) return []
    const points = new Set<number>()
    for (const [start, end] of spans) {
      points.add(start)
      points.add(end)
    }
    return [...points].sort((a, b) => a - b)
  }

  private loopLength(): number {
    const spans = this.st.candidates[this.st.audibleIndex]?.segments
    if (!spans || spans.length === 0) return LOOP_FALLBACK_SECONDS
    return Math.max(...spans.map(([, end]) => end))
  }

  setActiveIndex(index: number): void {
    const st = this.st
    const clamped = Math.min(N_DETENTS - 1, Math.max(0, Math.round(index)))
    st.activeIndex = clamped
    if (!st.looping) {
      st.audibleIndex = clamped // nothing sounding; keep them in step
      return
    }
    if (this.boundaries().length === 0) {
      // no annotations: audible/visual switch is immediate
      this.switchAudible(clamped)
    }
    // otherwise the switch is deferred to the next boundary (see tick)
  }

  private switchAudible(index: number): void {
    const st = this.st
    if (st.audibleIndex === index) return
    st.audibleIndex = index
    if (st.looping) this.audio.startCandidate(index, st.position)
  }

  startLoop(): void {
    const st = this.st
    if (st.referencePlaying) this.stopReference() // mutual exclusion
    if (st.looping) return
    st.looping = true
    st.audibleIndex = st.activeIndex
    this.audio.startCandidate(st.audibleIndex, st.position)
  }

  stopLoop(): void {
    const st = this.st
    if (!st.looping) return
    st.looping = false
    this.audio.stopCandidate()
  }

  playReference(): void {
    const st = this.st
    if (!st.referenceUrl) return // control hidden without a reference
    if (st.looping) this.stopLoop() // mutual exclusion
    st.referencePlaying = true
    this.audio.startReference(st.referenceUrl)
  }

  stopReference(): void {
    const st = this.st
    if (!st.referencePlaying) return
    st.referencePlaying = false
    this.audio.stopReference()
  }

  /** Advance the shared playback clock; apply deferred switches at boundaries. */
  tick(dt: number): void {
    const st = this.st
    if (!st.looping) return
    const length = this.loopLength()
    const before = st.position
    let after = before + dt
    const crossed: number[] = []
    for (const b of this.boundaries()) {
      if (b > before && b <= after) crossed.push(b)
    }
    if (after >= length) {
      after -= length
      crossed.push(0) // the wrap point is a boundary too
    }
    st.position = after
    if (crossed.length > 0 && st.activeIndex !== st.audibleIndex) {
      this.switchAudible(st.activeIndex)
    }
  }

  async submit(): Promise<SubmitOutcome> {
    const st = this.st
    if (st.submitting) return { kind: 'suppressed' }
    if (st.completed) return { kind: 'complete' }
    st.submitting = true
    const submitted = st.activeIndex // always the detent at submit time
    try {
      const result = await this.api.submitChoice(st.sessionId, submitted)
      switch (result.kind) {
        case 'advanced':
          this.applyAdvance(submitted, result.body)
          return { kind: 'advanced', step: st.step }
        case 'conflict':
          return { kind: 'conflict' }
        case 'complete':
          this.enterExportView()
          return { kind: 'complete' }
        case 'rejected':
          return { kind: 'rejected', detail: result.detail }
      }
    } catch (err) {
      return { kind: 'network-error', message: String(err) } // state preserved
    } finally {
      st.submitting = false
    }
  }

  private applyAdvance(submitted: number, body: ChoiceAccepted): void {
    const st = this.st
    st.history.push({ step: body.step - 1, chosenIndex: submitted, chosenPoint: body.chosen_point })
    st.step = body.step
    st.candidates = body.candidates
    st.activeIndex = NEUTRAL_DETENT
    st.audibleIndex = NEUTRAL_DETENT
    st.position = 0
    this.audio.preload(body.candidates.map((c) => c.asset_url ?? null))
    if (st.looping) this.audio.startCandidate(NEUTRAL_DETENT, 0)
    if (body.remaining_steps === 0) {
      this.enterExportView() // budget spent; no need to wait for a 410
    }
  }

  enterExportView(): void {
    const st = this.st
    st.completed = true
    this.stopLoop()
    this.stopReference()
  }

  /** Fetch (once) and cache the export document, verbatim. */
  ensureExport(): Promise<{ raw: string; body: unknown }> {
    if (!this.exportFetch) {
      this.exportFetch = this.api.exportSession(this.st.sessionId).then((res) => {
        this.exportRaw = res.raw
        this.exportBody = res.body
        return res
      })
    }
    return this.exportFetch
  }
}
