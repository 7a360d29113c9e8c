// Visual fallback when candidates carry no audio asset (identity renderer):
// the active candidate's vector drawn as per-dimension bars.

export function drawVector(canvas: HTMLCanvasElement, vector: number[]): void {
  const ctx = canvas.getContext('2d')
  if (!ctx) return
  const { width, height } = canvas
  ctx.clearRect(0, 0, width, height)
  const n = vector.length
  const barWidth = width / n
  for (let i = 0; i < n; i++) {
    const v = Math.min(1, Math.max(0, vector[i]))
    const barHeight = v * (height - 16)
    const hue = Math.round((i / n) * 300)
    ctx.fillStyle = `hsl(${hue} 65% 55%)`
    ctx.fillRect(i * barWidth + 1, height - barHeight, barWidth - 2, barHeight)
    ctx.fillStyle = '#666'
    ctx.font = '9px sans-serif'
    ctx.fillText(String(i), i * barWidth + 2, height - 4)
  }
}
