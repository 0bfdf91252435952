import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest'
import { AnnotateView } from '../src/annotate.js'
import { ReviewApi } from '../src/api.js'
import { flush, jsonResponse, makeTask, noContent, scriptFetch } from './helpers.js'

let root: HTMLElement
let view: AnnotateView | null = null

beforeEach(() => {
  document.body.innerHTML = '<div id="root"></div>'
  root = document.getElementById('root') as HTMLElement
})

afterEach(() => {
  view?.stop()
  view = null
  vi.unstubAllGlobals()
})

async function startView(): Promise<AnnotateView> {
  view = new AnnotateView(root, new ReviewApi('http://svc'), 'ann-1')
  await view.start()
  await flush()
  return view
}

function clickCandidate(index: number): void {
  const buttons = root.querySelectorAll<HTMLButtonElement>('button.pick')
  buttons[index]?.click()
}

function clickSubmit(): void {
  root.querySelector<HTMLButtonElement>('button.submit')?.click()
}

describe('task rendering', () => {
  it('shows the sentence with the numeral highlighted', async () => {
    scriptFetch([() => jsonResponse(makeTask())])
    await startView()
    const mark = root.querySelector('.sentence mark')
    expect(mark?.textContent).toBe('1042.55')
    expect(root.querySelector('.sentence')?.textContent).toBe(
      'The company reported 1042.55 million for the period.',
    )
  })

  it('lists every served candidate with collapsed documentation', async () => {
    scriptFetch([() => jsonResponse(makeTask())])
    await startView()
    const items = root.querySelectorAll('.candidate')
    expect(items.length).toBe(5)
    const details = root.querySelectorAll<HTMLDetailsElement>('.candidate details')
    expect(details.length).toBe(5)
    expect([...details].every((d) => !d.open)).toBe(true)
    expect(root.textContent).toContain('synthetic liability metric 002')
  })

  it('shows the progress counter from the payload', async () => {
    scriptFetch([() => jsonResponse(makeTask({ progress: { done: 1, total: 3 } }))])
    await startView()
    expect(root.querySelector('.progress')?.textContent).toBe('Task 2 of 3')
  })
})

describe('submission flow', () => {
  it('blocks submit until a candidate is selected', async () => {
    const { mock } = scriptFetch([() => jsonResponse(makeTask())])
    await startView()
    const fetchCallsAfterLoad = mock.mock.calls.length
    clickSubmit()
    await flush()
    expect(root.querySelector('.message')?.textContent).toBe(
      'Select a tag before submitting.',
    )
    expect(mock.mock.calls.length).toBe(fetchCallsAfterLoad) // no POST went out
  })

  it('posts the third candidate tag when candidate 3 is selected', async () => {
    const task = makeTask()
    const { calls } = scriptFetch([
      () => jsonResponse(task),
      () => jsonResponse({ ok: true }),
      () => noContent(),
    ])
    await startView()
    clickCandidate(2)
    clickSubmit()
    await flush()
    const post = calls.find((c) => c.url.endsWith('/annotations'))
    expect(post).toBeDefined()
    expect(JSON.parse(String(post?.init?.body))).toEqual({
      task_id: task.task_id,
      annotator: 'ann-1',
      chosen: task.candidates[2]?.tag,
    })
  })

  it('advances to the next task after a successful submit', async () => {
    const second = makeTask({
      task_id: 's00002:0',
      text: 'Cash settlements of 77.10 million were recorded.',
      highlight: { start: 20, end: 25 },
      progress: { done: 1, total: 3 },
    })
    scriptFetch([
      () => jsonResponse(makeTask()),
      () => jsonResponse({ ok: true }),
      () => jsonResponse(second),
    ])
    await startView()
    clickCandidate(0)
    clickSubmit()
    await flush()
    expect(root.querySelector('.sentence mark')?.textContent).toBe('77.10')
  })

  it('reaches the terminal state on 204', async () => {
    scriptFetch([
      () => jsonResponse(makeTask({ progress: { done: 2, total: 3 } })),
      () => jsonResponse({ ok: true }),
      () => noContent(),
    ])
    await startView()
    clickCandidate(1)
    clickSubmit()
    await flush()
    expect(root.querySelector('.done-state')).not.toBeNull()
    expect(root.textContent).toContain('No tasks remaining')
  })

  it('refetches when the server rejects a stale task', async () => {
    const replacement = makeTask({ task_id: 's00009:0' })
    scriptFetch([
      () => jsonResponse(makeTask()),
      () => jsonResponse({ detail: 'stale' }, 422),
      () => jsonResponse(replacement),
    ])
    await startView()
    clickCandidate(0)
    clickSubmit()
    await flush()
    const picks = root.querySelectorAll('button.pick')
    expect(picks.length).toBe(5) // a task is on screen again
  })
})

describe('keyboard shortcuts', () => {
  function press(key: string): void {
    document.dispatchEvent(new KeyboardEvent('keydown', { key, bubbles: true }))
  }

  it('digit keys select the matching candidate', async () => {
    scriptFetch([() => jsonResponse(makeTask())])
    await startView()
    press('3')
    await flush()
    const selected = root.querySelector('.candidate.selected .pick')
    expect(selected?.textContent).toContain('synthetic liability metric 002')
  })

  it('enter submits the selection', async () => {
    const task = makeTask()
    const { calls } = scriptFetch([
      () => jsonResponse(task),
      () => jsonResponse({ ok: true }),
      () => noContent(),
    ])
    await startView()
    press('2')
    press('Enter')
    await flush()
    const post = calls.find((c) => c.url.endsWith('/annotations'))
    expect(JSON.parse(String(post?.init?.body)).chosen).toBe(
      task.candidates[1]?.tag,
    )
  })

  it('out-of-range digits are ignored', async () => {
    scriptFetch([() => jsonResponse(makeTask())])
    await startView()
    press('9')
    await flush()
    expect(root.querySelector('.candidate.selected')).toBeNull()
  })
})

describe('failure handling', () => {
  it('shows a retry banner when the service is unreachable', async () => {
    vi.stubGlobal(
      'fetch',
      vi.fn(async () => {
        throw new TypeError('fetch failed')
      }),
    )
    await startView()
    expect(root.querySelector('.retry-banner')).not.toBeNull()
  })

  it('retry button refetches and recovers', async () => {
    let failing = true
    vi.stubGlobal(
      'fetch',
      vi.fn(async () => {
        if (failing) throw new TypeError('fetch failed')
        return jsonResponse(makeTask())
      }),
    )
    await startView()
    failing = false
    root.querySelector<HTMLButtonElement>('button.retry')?.click()
    await flush()
    expect(root.querySelector('.sentence')).not.toBeNull()
  })
})
