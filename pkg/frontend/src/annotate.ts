import { ReviewApi, ServiceUnreachableError, StaleTaskError } from './api.js'
import { renderHighlightedSentence } from './highlight.js'
import type { TaskView } from './types.js'

type Phase = 'loading' | 'task' | 'done' | 'unreachable'

/**
 * Single-task annotation flow: fetch -> render -> pick -> submit -> next.
 *
 * Keyboard: digits 1..k select a candidate, Enter submits. Submission is
 * blocked with an inline message until a candidate is selected. A 204
 * ends the queue; a stale-task rejection refetches; a network failure
 * shows a retry banner.
 */
export class AnnotateView {
  private phase: Phase = 'loading'
  private task: TaskView | null = null
  private selected: number | null = null
  private message = ''
  private lastProgress: { done: number; total: number } | null = null
  private readonly keyHandler = (event: KeyboardEvent) => this.onKey(event)

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly annotator: string,
  ) {}

  async start(): Promise<void> {
    document.addEventListener('keydown', this.keyHandler)
    await this.fetchNext()
  }

  stop(): void {
    document.removeEventListener('keydown', this.keyHandler)
  }

  private async fetchNext(): Promise<void> {
    this.phase = 'loading'
    this.render()
    try {
      const task = await this.api.nextTask(this.annotator)
      this.selected = null
      this.message = ''
      if (task === null) {
        this.phase = 'done'
        this.task = null
      } else {
        this.phase = 'task'
        this.task = task
        this.lastProgress = task.progress
      }
    } catch (error) {
      if (error instanceof ServiceUnreachableError) {
        this.phase = 'unreachable'
      } else {
        throw error
      }
    }
    this.render()
  }

  private select(index: number): void {
    if (this.phase !== 'task' || this.task === null) return
    if (index < 0 || index >= this.task.candidates.length) return
    this.selected = index
    this.message = ''
    this.render()
  }

  private async submit(): Promise<void> {
    if (this.phase !== 'task' || this.task === null) return
    if (this.selected === null) {
      this.message = 'Select a tag before submitting.'
      this.render()
      return
    }
    const candidate = this.task.candidates[this.selected]
    if (candidate === undefined) return
    try {
      await this.api.submitAnnotation({
        task_id: this.task.task_id,
        annotator: this.annotator,
        chosen: candidate.tag,
      })
    } catch (error) {
      if (error instanceof StaleTaskError) {
        this.message = 'This task changed on the server; loading a fresh one.'
        await this.fetchNext()
        return
      }
      if (error instanceof ServiceUnreachableError) {
        this.phase = 'unreachable'
        this.render()
        return
      }
      throw error
    }
    await this.fetchNext()
  }

  private onKey(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null
    if (target && (target.tagName === 'INPUT' || target.tagName === 'TEXTAREA')) {
      return
    }
    if (event.key >= '1' && event.key <= '9') {
      this.select(Number(event.key) - 1)
    } else if (event.key === 'Enter') {
      event.preventDefault()
      void this.submit()
    }
  }

  private render(): void {
    this.root.textContent = ''
    switch (this.phase) {
      case 'loading':
        this.root.append(el('p', 'loading', 'Loading…'))
        return
      case 'unreachable':
        this.renderRetryBanner()
        return
      case 'done':
        this.renderDone()
        return
      case 'task':
        this.renderTask()
    }
  }

  private renderRetryBanner(): void {
    const banner = el('div', 'retry-banner')
    banner.append(el('p', '', 'Cannot reach the review service.'))
    const retry = document.createElement('button')
    retry.className = 'retry'
    retry.textContent = 'Retry'
    retry.addEventListener('click', () => void this.fetchNext())
    banner.append(retry)
    this.root.append(banner)
  }

  private renderDone(): void {
    const done = el('div', 'done-state')
    done.append(el('h2', '', 'No tasks remaining'))
    if (this.lastProgress) {
      done.append(
        el(
          'p',
          'progress',
          `${this.lastProgress.total} of ${this.lastProgress.total} tasks annotated.`,
        ),
      )
    }
    this.root.append(done)
  }

  private renderTask(): void {
    const task = this.task
    if (task === null) return
    const container = el('div', 'task')

    container.append(
      el(
        'p',
        'progress',
        `Task ${task.progress.done + 1} of ${task.progress.total}`,
      ),
    )
    container.append(
      renderHighlightedSentence(task.text, task.highlight.start, task.highlight.end),
    )

    const list = document.createElement('ol')
    list.className = 'candidates'
    task.candidates.forEach((candidate, index) => {
      const item = document.createElement('li')
      item.className = 'candidate' + (index === this.selected ? ' selected' : '')

      const pick = document.createElement('button')
      pick.className = 'pick'
      pick.dataset.index = String(index)
      pick.textContent = `${index + 1}. ${candidate.tag}`
      pick.addEventListener('click', () => this.select(index))
      item.append(pick)

      // Documentations average tens of words; keep them collapsed so a
      // task stays scannable, expanding only on demand.
      const details = document.createElement('details')
      const summary = document.createElement('summary')
      summary.textContent = 'documentation'
      details.append(summary)
      details.append(el('p', 'documentation', candidate.documentation))
      item.append(details)

      list.append(item)
    })
    container.append(list)

    const message = el('p', 'message', this.message)
    message.setAttribute('role', 'alert')
    container.append(message)

    const submit = document.createElement('button')
    submit.className = 'submit'
    submit.textContent = 'Submit (Enter)'
    submit.addEventListener('click', () => void this.submit())
    container.append(submit)

    this.root.append(container)
  }
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  return node
}
