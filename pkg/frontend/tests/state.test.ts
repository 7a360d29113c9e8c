import { describe, expect, it } from 'vitest'

import { SessionApi } from '../src/api.js'
import { NEUTRAL_DETENT, SessionController } from '../src/state.js'
import {
  FakeAudioEngine,
  advanceBody,
  createdBody,
  makeCandidates,
  scriptedFetch,
} from './fakes.js'

async function freshController(script: { status: number; body: unknown }[]) {
  const audio = new FakeAudioEngine()
  const api = new SessionApi('http://svc', scriptedFetch(script))
  const controller = new SessionController(api, audio)
  await controller.create({ dim: 2, seed: 1 })
  return { controller, audio }
}

describe('slider', () => {
  it('drag sets the active index', async () => {
    const { controller } = await freshController([{ status: 201, body: createdBody() }])
    controller.setActiveIndex(7)
    expect(controller.state!.activeIndex).toBe(7)
  })

  it('clamps out-of-range detents', async () => {
    const { controller } = await freshController([{ status: 201, body: createdBody() }])
    controller.setActiveIndex(99)
    expect(controller.state!.activeIndex).toBe(19)
    controller.setActiveIndex(-5)
    expect(controller.state!.activeIndex).toBe(0)
  })

  it('without annotations the audible candidate follows immediately', async () => {
    const { controller, audio } = await freshController([{ status: 201, body: createdBody() }])
    controller.startLoop()
    controller.setActiveIndex(4)
    expect(controller.state!.audibleIndex).toBe(4)
    expect(audio.candidatePlaying).toBe(4)
  })

  it('with annotations the audible switch waits for the next boundary', async () => {
    const segments: [number, number, string][] = [
      [0, 0.5, 'a'],
      [0.5, 1.5, 'b'],
    ]
    const body = createdBody({ candidates: makeCandidates(20, 2, segments) })
    const { controller, audio } = await freshController([{ status: 201, body }])
    controller.startLoop()
    controller.tick(0.2) // position 0.2, inside the first span
    controller.setActiveIndex(3)
    expect(controller.state!.audibleIndex).toBe(NEUTRAL_DETENT) // not yet
    expect(audio.candidatePlaying).toBe(NEUTRAL_DETENT)
    controller.tick(0.2) // still before the 0.5 boundary
    expect(controller.state!.audibleIndex).toBe(NEUTRAL_DETENT)
    controller.tick(0.2) // crosses 0.5
    expect(controller.state!.audibleIndex).toBe(3)
    expect(audio.candidatePlaying).toBe(3)
  })

  it('the loop wrap point also counts as a boundary', async () => {
    const segments: [number, number, string][] = [[0, 1.0, 'a']]
    const body = createdBody({ candidates: makeCandidates(20, 2, segments) })
    const { controller } = await freshController([{ status: 201, body }])
    controller.startLoop()
    controller.tick(0.9)
    controller.setActiveIndex(12)
    expect(controller.state!.audibleIndex).toBe(NEUTRAL_DETENT)
    controller.tick(0.2) // wraps past 1.0
    expect(controller.state!.audibleIndex).toBe(12)
    expect(controller.state!.position).toBeCloseTo(0.1, 10)
  })
})

describe('submit', () => {
  it('posts the detent at submit time and resets to neutral', async () => {
    const { controller } = await freshController([
      { status: 201, body: createdBody() },
      { status: 200, body: advanceBody(1) },
    ])
    controller.setActiveIndex(15)
    const outcome = await controller.submit()
    expect(outcome).toEqual({ kind: 'advanced', step: 1 })
    expect(controller.state!.step).toBe(1)
    expect(controller.state!.activeIndex).toBe(NEUTRAL_DETENT)
    expect(controller.state!.history).toHaveLength(1)
    expect(controller.state!.history[0].chosenIndex).toBe(15)
  })

  it('suppresses a second submit while one is in flight', async () => {
    const audio = new FakeAudioEngine()
    let resolveFirst: (r: Response) => void = () => {}
    let calls = 0
    const fetchImpl = (async (url: RequestInfo | URL) => {
      calls += 1
      if (String(url).endsWith('/sessions')) {
        const text = JSON.stringify(createdBody())
        return { status: 201, text: async () => text, json: async () => JSON.parse(text) } as Response
      }
      return new Promise<Response>((resolve) => {
        resolveFirst = resolve
      })
    }) as typeof fetch
    const controller = new SessionController(new SessionApi('http://svc', fetchImpl), audio)
    await controller.create({ dim: 2 })

    const first = controller.submit()
    const second = await controller.submit()
    expect(second.kind).toBe('suppressed')
    const text = JSON.stringify(advanceBody(1))
    resolveFirst({ status: 200, text: async () => text, json: async () => JSON.parse(text) } as Response)
    expect((await first).kind).toBe('advanced')
    expect(calls).toBe(2) // create + exactly one choice post
  })

  it('409 leaves state untouched and is retryable', async () => {
    const { controller } = await freshController([
      { status: 201, body: createdBody() },
      { status: 409, body: { detail: 'busy' } },
      { status: 200, body: advanceBody(1) },
    ])
    controller.setActiveIndex(2)
    const conflicted = await controller.submit()
    expect(conflicted.kind).toBe('conflict')
    expect(controller.state!.step).toBe(0)
    expect(controller.state!.activeIndex).toBe(2) // preserved for retry
    const retried = await controller.submit()
    expect(retried.kind).toBe('advanced')
  })

  it('410 flips to the export view', async () => {
    const { controller } = await freshController([
      { status: 201, body: createdBody() },
      { status: 410, body: { detail: 'complete' } },
    ])
    const outcome = await controller.submit()
    expect(outcome.kind).toBe('complete')
    expect(controller.state!.completed).toBe(true)
  })

  it('network failure preserves state for retry', async () => {
    const audio = new FakeAudioEngine()
    let first = true
    const fetchImpl = (async (url: RequestInfo | URL) => {
      if (String(url).endsWith('/sessions')) {
        const text = JSON.stringify(createdBody())
        return { status: 201, text: async () => text, json: async () => JSON.parse(text) } as Response
      }
      if (first) {
        first = false
        throw new TypeError('network down')
      }
      const text = JSON.stringify(advanceBody(1))
      return { status: 200, text: async () => text, json: async () => JSON.parse(text) } as Response
    }) as typeof fetch
    const controller = new SessionController(new SessionApi('http://svc', fetchImpl), audio)
    await controller.create({ dim: 2 })
    controller.setActiveIndex(8)
    const failed = await controller.submit()
    expect(failed.kind).toBe('network-error')
    expect(controller.state!.step).toBe(0)
    expect(controller.state!.activeIndex).toBe(8)
    expect((await controller.submit()).kind).toBe('advanced')
  })

  it('never mutates candidate vectors', async () => {
    const body = createdBody()
    const snapshot = JSON.parse(JSON.stringify(body))
    const { controller } = await freshController([{ status: 201, body }])
    controller.setActiveIndex(3)
    controller.startLoop()
    controller.tick(1.0)
    expect(controller.state!.candidates).toEqual(
      (snapshot as { candidates: unknown }).candidates,
    )
  })
})

describe('reference audio', () => {
  it('pauses the loop before playing the reference', async () => {
    const { controller, audio } = await freshController([{ status: 201, body: createdBody() }])
    controller.startLoop()
    controller.playReference()
    expect(controller.state!.looping).toBe(false)
    expect(controller.state!.referencePlaying).toBe(true)
    expect(audio.candidatePlaying).toBe(-1)
    expect(audio.referencePlaying).toBe(true)
  })

  it('stops the reference before resuming the loop', async () => {
    const { controller, audio } = await freshController([{ status: 201, body: createdBody() }])
    controller.playReference()
    controller.startLoop()
    expect(controller.state!.referencePlaying).toBe(false)
    expect(controller.state!.looping).toBe(true)
    expect(audio.referencePlaying).toBe(false)
  })

  it('reference control is inert when no reference is configured', async () => {
    const { controller, audio } = await freshController([
      { status: 201, body: createdBody({ reference_url: null }) },
    ])
    controller.playReference()
    expect(controller.state!.referencePlaying).toBe(false)
    expect(audio.referencePlaying).toBe(false)
  })
})
