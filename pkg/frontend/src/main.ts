// DOM wiring for the live session page: one 20-detent slider, looped
// playback with per-annotation switching, reference audio with mutual
// exclusion, submission, and the export view.

import { SessionApi } from './api.js'
import { HtmlAudioEngine } from './audio.js'
import { N_DETENTS, SessionController } from './state.js'
import { drawVector } from './vectorview.js'

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id)
  if (!el) throw new Error(`missing element #${id}`)
  return el as T
}

const serviceUrl = $<HTMLInputElement>('service-url')
const dimInput = $<HTMLInputElement>('dim')
const seedInput = $<HTMLInputElement>('seed')
const createBtn = $<HTMLButtonElement>('create')
const sessionPanel = $<HTMLDivElement>('session-panel')
const exportPanel = $<HTMLDivElement>('export-panel')
const slider = $<HTMLInputElement>('slider')
const stepLabel = $<HTMLSpanElement>('step-label')
const loopBtn = $<HTMLButtonElement>('loop')
const referenceBtn = $<HTMLButtonElement>('reference')
const submitBtn = $<HTMLButtonElement>('submit')
const statusLine = $<HTMLParagraphElement>('status')
const canvas = $<HTMLCanvasElement>('vector-view')
const historyList = $<HTMLUListElement>('history')
const exportJson = $<HTMLPreElement>('export-json')
const downloadLink = $<HTMLAnchorElement>('download')

let controller: SessionController | null = null
let lastTick = performance.now()

slider.min = '0'
slider.max = String(N_DETENTS - 1)
slider.step = '1'

function setStatus(text: string): void {
  statusLine.textContent = text
}

function render(): void {
  if (!controller?.state) return
  const st = controller.state
  stepLabel.textContent = `step ${st.step} / ${st.maxSteps}`
  slider.value = String(st.activeIndex)
  loopBtn.textContent = st.looping ? 'Stop loop' : 'Loop playback'
  referenceBtn.hidden = !st.referenceUrl
  referenceBtn.textContent = st.referencePlaying ? 'Stop reference' : 'Play reference'
  submitBtn.disabled = st.submitting || st.completed
  const active = st.candidates[st.activeIndex]
  if (active) drawVector(canvas, active.vector)
  historyList.replaceChildren(
    ...st.history.map((h) => {
      const li = document.createElement('li')
      li.textContent = `step ${h.step}: detent ${h.chosenIndex}`
      return li
    }),
  )
  if (st.completed) {
    sessionPanel.hidden = true
    exportPanel.hidden = false
  }
}

async function showExport(): Promise<void> {
  if (!controller) return
  const { raw } = await controller.ensureExport()
  exportJson.textContent = raw
  // the download is the service's bytes, untouched
  downloadLink.href = URL.createObjectURL(new Blob([raw], { type: 'application/json' }))
  downloadLink.download = 'session-export.json'
}

createBtn.addEventListener('click', async () => {
  try {
    const api = new SessionApi(serviceUrl.value.replace(/\/$/, ''))
    controller = new SessionController(api, new HtmlAudioEngine())
    await controller.create({
      dim: parseInt(dimInput.value, 10),
      seed: parseInt(seedInput.value, 10),
    })
    sessionPanel.hidden = false
    exportPanel.hidden = true
    setStatus('session started: pick the best slider position, then submit')
    render()
  } catch (err) {
    setStatus(String(err))
  }
})

slider.addEventListener('input', () => {
  controller?.setActiveIndex(parseInt(slider.value, 10))
  render()
})

loopBtn.addEventListener('click', () => {
  if (!controller?.state) return
  if (controller.state.looping) controller.stopLoop()
  else controller.startLoop()
  render()
})

referenceBtn.addEventListener('click', () => {
  if (!controller?.state) return
  if (controller.state.referencePlaying) controller.stopReference()
  else controller.playReference()
  render()
})

submitBtn.addEventListener('click', async () => {
  if (!controller) return
  const outcome = await controller.submit()
  switch (outcome.kind) {
    case 'advanced':
      setStatus(`choice accepted; now at step ${outcome.step}`)
      break
    case 'conflict':
      setStatus('another choice is in flight; try again')
      break
    case 'complete':
      setStatus('session complete')
      await showExport()
      break
    case 'suppressed':
      return // double-click while in flight; first request wins
    case 'rejected':
      setStatus(`rejected: ${outcome.detail}`)
      break
    case 'network-error':
      setStatus(`network error (state preserved, retry): ${outcome.message}`)
      break
  }
  if (controller.state?.completed) await showExport()
  render()
})

function tickLoop(now: number): void {
  const dt = (now - lastTick) / 1000
  lastTick = now
  if (controller?.state && !controller.state.completed) {
    controller.tick(dt)
  }
  requestAnimationFrame(tickLoop)
}
requestAnimationFrame(tickLoop)
