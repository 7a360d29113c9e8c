// Audio playback abstraction. The controller owns all play/stop decisions
// (including the reference-vs-candidates mutual exclusion); engines just
// start and stop sources. A DOM-free fake stands in during tests.

export interface AudioEngine {
  /** Pre-load candidate assets in the background; null = no asset. */
  preload(urls: (string | null)[]): void
  /** Make candidate `index` the audible looped source from `position` seconds. */
  startCandidate(index: number, position: number): void
  /** Silence the candidate loop. */
  stopCandidate(): void
  startReference(url: string): void
  stopReference(): void
}

/**
 * Gapless candidate switching in the browser: all twenty assets share one
 * playback clock; switching candidates mutes one element and unmutes the
 * next at the same offset, so a swap at an annotation boundary is seamless.
 */
export class HtmlAudioEngine implements AudioEngine {
  private elements: (HTMLAudioElement | null)[] = []
  private reference: HTMLAudioElement | null = null
  private audible = -1

  preload(urls: (string | null)[]): void {
    this.stopCandidate()
    this.elements = urls.map((url) => {
      if (!url) return null
      const el = new Audio(url)
      el.preload = 'auto'
      el.loop = true
      el.muted = true
      return el
    })
  }

  startCandidate(index: number, position: number): void {
    const el = this.elements[index]
    if (this.audible >= 0 && this.audible !== index) {
      const prev = this.elements[this.audible]
      if (prev) {
        prev.muted = true
        prev.pause()
      }
    }
    if (el) {
      el.currentTime = position
      el.muted = false
      void el.play()
    }
    this.audible = index
  }

  stopCandidate(): void {
    if (this.audible >= 0) {
      const el = this.elements[this.audible]
      if (el) {
        el.muted = true
        el.pause()
      }
    }
    this.audible = -1
  }

  startReference(url: string): void {
    if (!this.reference || this.reference.src !== url) {
      this.reference = new Audio(url)
    }
    this.reference.currentTime = 0
    void this.reference.play()
  }

  stopReference(): void {
    this.reference?.pause()
  }
}
