/**
 * Render a sentence with the target numeral wrapped in <mark>.
 * Built from text nodes, never innerHTML, so statement text cannot
 * inject markup.
 */
export function renderHighlightedSentence(
  text: string,
  start: number,
  end: number,
): HTMLParagraphElement {
  const paragraph = document.createElement('p')
  paragraph.className = 'sentence'
  paragraph.append(document.createTextNode(text.slice(0, start)))
  const mark = document.createElement('mark')
  mark.textContent = text.slice(start, end)
  paragraph.append(mark)
  paragraph.append(document.createTextNode(text.slice(end)))
  return paragraph
}
