import type { AgreementReport, AgreementSplit } from './types.js'

// The three fractions reported by the service, in display order.
const METRICS: ReadonlyArray<{ key: keyof AgreementSplit; label: string }> = [
  { key: 'both_correct', label: 'Both annotators correct' },
  { key: 'correct_fraction', label: 'Correct choices' },
  { key: 'agreement', label: 'Inter-annotator agreement' },
]

const SPLITS: ReadonlyArray<{
  key: 'machine_correct' | 'machine_incorrect'
  label: string
}> = [
  { key: 'machine_correct', label: 'machine correct' },
  { key: 'machine_incorrect', label: 'machine failed' },
]

/**
 * Grouped bars of the agreement report, split by machine correctness.
 *
 * Every number shown comes straight from the payload: each bar carries
 * the raw value in data-value and a fixed-precision text label. An empty
 * report renders the placeholder state. Re-rendering with the same
 * report is idempotent.
 */
export function renderDashboard(root: HTMLElement, report: AgreementReport): void {
  root.textContent = ''
  if (report.overall === null) {
    const placeholder = document.createElement('p')
    placeholder.className = 'placeholder'
    placeholder.textContent =
      'No agreement data yet: no task has two annotations.'
    root.append(placeholder)
    return
  }

  const chart = document.createElement('div')
  chart.className = 'chart'
  for (const metric of METRICS) {
    const group = document.createElement('div')
    group.className = 'metric-group'
    group.dataset.metric = String(metric.key)

    const bars = document.createElement('div')
    bars.className = 'bars'
    for (const split of SPLITS) {
      bars.append(renderBar(report[split.key], metric.key, split.key, split.label))
    }
    group.append(bars)

    const caption = document.createElement('p')
    caption.className = 'metric-label'
    caption.textContent = metric.label
    group.append(caption)

    chart.append(group)
  }
  root.append(chart)

  const footer = document.createElement('p')
  footer.className = 'chart-footer'
  footer.textContent =
    `${report.overall.n_tasks} doubly annotated tasks, ` +
    `${report.excluded} excluded`
  root.append(footer)
}

function renderBar(
  split: AgreementSplit | null,
  metric: keyof AgreementSplit,
  splitKey: string,
  splitLabel: string,
): HTMLElement {
  const wrapper = document.createElement('div')
  wrapper.className = `bar-slot ${splitKey}`

  const value = split === null ? null : split[metric]
  const bar = document.createElement('div')
  bar.className = 'bar'
  bar.dataset.split = splitKey
  bar.dataset.metric = String(metric)
  bar.dataset.value = value === null ? 'null' : String(value)
  bar.style.height = value === null ? '0%' : `${value * 100}%`

  const label = document.createElement('span')
  label.className = 'bar-value'
  label.textContent = value === null ? '—' : value.toFixed(3)
  wrapper.append(label)
  wrapper.append(bar)

  const name = document.createElement('span')
  name.className = 'bar-name'
  name.textContent = splitLabel
  wrapper.append(name)
  return wrapper
}
