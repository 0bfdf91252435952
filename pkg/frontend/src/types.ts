// Payload shapes served by the review service. The client renders these
// verbatim: every number shown in the UI originates here, and no field
// beyond these ever reaches the DOM.

export interface Candidate {
  tag: string
  documentation: string
}

export interface TaskView {
  task_id: string
  sid: string
  mention_index: number
  text: string
  highlight: { start: number; end: number }
  candidates: Candidate[]
  progress: { done: number; total: number }
}

export interface AgreementSplit {
  both_correct: number | null
  correct_fraction: number | null
  agreement: number | null
  n_tasks: number
}

export interface AgreementReport {
  overall: AgreementSplit | null
  machine_correct: AgreementSplit | null
  machine_incorrect: AgreementSplit | null
  excluded: number
}

export interface AnnotationBody {
  task_id: string
  annotator: string
  chosen: string
}
