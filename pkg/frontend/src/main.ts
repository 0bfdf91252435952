import { AnnotateView } from './annotate.js'
import { ReviewApi, ServiceUnreachableError } from './api.js'
import { renderDashboard } from './dashboard.js'

// Same-origin by default; a static deployment can point elsewhere by
// setting window.XFNL_API_BASE before this module loads.
declare global {
  interface Window {
    XFNL_API_BASE?: string
  }
}

const api = new ReviewApi(window.XFNL_API_BASE ?? '')
let activeView: AnnotateView | null = null

function appRoot(): HTMLElement {
  const root = document.getElementById('app')
  if (!root) throw new Error('missing #app mount point')
  return root
}

function renderNav(current: 'annotate' | 'dashboard'): HTMLElement {
  const nav = document.createElement('nav')
  for (const [hash, label, key] of [
    ['#/annotate', 'Annotate', 'annotate'],
    ['#/dashboard', 'Dashboard', 'dashboard'],
  ] as const) {
    const link = document.createElement('a')
    link.href = hash
    link.textContent = label
    if (key === current) link.className = 'active'
    nav.append(link)
  }
  return nav
}

function annotatorId(): string | null {
  return sessionStorage.getItem('xfnl-annotator')
}

function renderLogin(root: HTMLElement): void {
  const form = document.createElement('form')
  form.className = 'login'
  const label = document.createElement('label')
  label.textContent = 'Annotator id'
  const input = document.createElement('input')
  input.name = 'annotator'
  input.required = true
  label.append(input)
  const button = document.createElement('button')
  button.type = 'submit'
  button.textContent = 'Start annotating'
  form.append(label, button)
  form.addEventListener('submit', (event) => {
    event.preventDefault()
    const value = input.value.trim()
    if (!value) return
    sessionStorage.setItem('xfnl-annotator', value)
    void route()
  })
  root.append(form)
}

async function showAnnotate(root: HTMLElement): Promise<void> {
  const annotator = annotatorId()
  if (!annotator) {
    renderLogin(root)
    return
  }
  const mount = document.createElement('div')
  mount.id = 'annotate-view'
  root.append(mount)
  activeView = new AnnotateView(mount, api, annotator)
  await activeView.start()
}

async function showDashboard(root: HTMLElement): Promise<void> {
  const mount = document.createElement('div')
  mount.id = 'dashboard-view'
  root.append(mount)
  const refresh = document.createElement('button')
  refresh.className = 'refresh'
  refresh.textContent = 'Refresh'
  const chart = document.createElement('div')
  mount.append(refresh, chart)

  const load = async () => {
    try {
      renderDashboard(chart, await api.agreement())
    } catch (error) {
      chart.textContent = ''
      const failure = document.createElement('p')
      failure.className = 'placeholder'
      failure.textContent =
        error instanceof ServiceUnreachableError
          ? 'Cannot reach the review service.'
          : 'Failed to load the agreement report.'
      chart.append(failure)
    }
  }
  refresh.addEventListener('click', () => void load())
  await load()
}

async function route(): Promise<void> {
  const root = appRoot()
  activeView?.stop()
  activeView = null
  root.textContent = ''
  const hash = window.location.hash || '#/annotate'
  const view = hash.startsWith('#/dashboard') ? 'dashboard' : 'annotate'
  root.append(renderNav(view))
  const body = document.createElement('main')
  root.append(body)
  if (view === 'dashboard') {
    await showDashboard(body)
  } else {
    await showAnnotate(body)
  }
}

window.addEventListener('hashchange', () => void route())
void route()
