import type { AgreementReport, AnnotationBody, TaskView } from './types.js'

/** The service could not be reached at all (network failure). */
export class ServiceUnreachableError extends Error {
  constructor(cause?: unknown) {
    super('review service unreachable')
    this.name = 'ServiceUnreachableError'
    this.cause = cause
  }
}

/** The task changed or vanished server-side; the caller should refetch. */
export class StaleTaskError extends Error {
  constructor(detail: string) {
    super(detail)
    this.name = 'StaleTaskError'
  }
}

const TASK_KEYS: ReadonlyArray<keyof TaskView> = [
  'task_id',
  'sid',
  'mention_index',
  'text',
  'highlight',
  'candidates',
  'progress',
]

/**
 * Narrow a raw payload to exactly the TaskView fields. Unknown keys are
 * dropped so nothing the server did not intend for annotators can leak
 * into the DOM, whatever a future payload may carry.
 */
export function toTaskView(raw: Record<string, unknown>): TaskView {
  const picked: Record<string, unknown> = {}
  for (const key of TASK_KEYS) {
    if (!(key in raw)) throw new Error(`task payload is missing "${key}"`)
    picked[key] = raw[key]
  }
  return picked as unknown as TaskView
}

export class ReviewApi {
  constructor(private readonly baseUrl: string = '') {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    try {
      return await fetch(this.baseUrl + path, init)
    } catch (cause) {
      throw new ServiceUnreachableError(cause)
    }
  }

  /** Next pending task for this annotator, or null when the queue is empty. */
  async nextTask(annotator: string): Promise<TaskView | null> {
    const response = await this.request(
      `/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    )
    if (response.status === 204) return null
    if (!response.ok) {
      throw new Error(`tasks/next failed with status ${response.status}`)
    }
    return toTaskView((await response.json()) as Record<string, unknown>)
  }

  async submitAnnotation(body: AnnotationBody): Promise<void> {
    const response = await this.request('/annotations', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    })
    if (response.status === 422 || response.status === 404) {
      const detail = await response.text()
      throw new StaleTaskError(detail || `rejected with ${response.status}`)
    }
    if (!response.ok) {
      throw new Error(`annotation failed with status ${response.status}`)
    }
  }

  async agreement(): Promise<AgreementReport> {
    const response = await this.request('/reports/agreement')
    if (!response.ok) {
      throw new Error(`agreement report failed with status ${response.status}`)
    }
    return (await response.json()) as AgreementReport
  }
}
