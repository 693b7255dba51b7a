/**
 * One-keystroke class bindings: digits 1-9 then 0, then letters, skipping
 * keys reserved for navigation. Bindings are unique by construction.
 */

export const SKIP_KEY = ' ';
const RESERVED = new Set([SKIP_KEY]);

const KEY_ORDER = [
  ...'123456789'.split(''),
  '0',
  ...'abcdefghijklmnopqrstuvwxyz'.split(''),
].filter((k) => !RESERVED.has(k));

export interface ClassBinding {
  key: string;
  className: string;
}

export function assignBindings(classNames: string[]): ClassBinding[] {
  if (classNames.length > KEY_ORDER.length) {
    throw new Error(`too many classes to bind: ${classNames.length} > ${KEY_ORDER.length}`);
  }
  const seen = new Set<string>();
  for (const name of classNames) {
    if (seen.has(name)) throw new Error(`duplicate class name: ${name}`);
    seen.add(name);
  }
  return classNames.map((className, i) => ({ key: KEY_ORDER[i], className }));
}

export function classForKey(bindings: ClassBinding[], key: string): string | null {
  const hit = bindings.find((b) => b.key === key.toLowerCase());
  return hit ? hit.className : null;
}
