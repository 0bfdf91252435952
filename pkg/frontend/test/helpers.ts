import { vi } from 'vitest'
import type { TaskView } from '../src/types.js'

export function makeTask(overrides: Partial<TaskView> = {}): TaskView {
  return {
    task_id: 's00001:0',
    sid: 's00001',
    mention_index: 0,
    text: 'The company reported 1042.55 million for the period.',
    highlight: { start: 21, end: 28 },
    candidates: [
      { tag: 'synthetic revenue metric 000', documentation: 'Amount of revenue recognized under concept uniq000 reported for the period.' },
      { tag: 'synthetic expense metric 001', documentation: 'Amount of expense recognized under concept uniq001 reported for the period.' },
      { tag: 'synthetic liability metric 002', documentation: 'Amount of liability recognized under concept uniq002 reported for the period.' },
      { tag: 'synthetic asset metric 003', documentation: 'Amount of asset recognized under concept uniq003 reported for the period.' },
      { tag: 'others', documentation: 'others' },
    ],
    progress: { done: 0, total: 3 },
    ...overrides,
  }
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  })
}

export function noContent(): Response {
  return new Response(null, { status: 204 })
}

/** Install a scripted fetch; each call consumes the next responder. */
export function scriptFetch(
  responders: Array<(url: string, init?: RequestInit) => Response | Promise<Response>>,
) {
  const calls: Array<{ url: string; init?: RequestInit }> = []
  let index = 0
  const mock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
    const responder = responders[Math.min(index, responders.length - 1)]
    index += 1
    calls.push({ url: String(url), init })
    if (!responder) throw new Error('fetch script exhausted')
    return responder(String(url), init)
  })
  vi.stubGlobal('fetch', mock)
  return { mock, calls }
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0))
}
