// Tiny DOM helpers; no framework.

export function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, attrs: Record<string, string> = {},
    ...children: (Node | string)[]): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function clear(node: HTMLElement): HTMLElement {
  node.replaceChildren();
  return node;
}

export function badge(text: string, color: string): HTMLElement {
  const b = el("span", { class: "badge" }, text);
  b.style.background = color;
  return b;
}
