// Client-side pre-validation: cheap structural checks before a correction is
// sent. The server runs the real validators; these only catch obvious slips
// early so the curator gets instant feedback.

export interface ValidationResult {
  ok: boolean;
  message?: string;
}

const SMILES_CHARS = /^[A-Za-z0-9@+\-#=$:/\\%.()[\]*]+$/;

/** Bracket/paren/ring-digit balance check for a SMILES string. */
export function validateSmilesSyntax(smiles: string): ValidationResult {
  if (!smiles.trim()) {
    return { ok: false, message: "SMILES must not be empty" };
  }
  if (!SMILES_CHARS.test(smiles)) {
    return { ok: false, message: "SMILES contains characters outside the SMILES alphabet" };
  }
  let parens = 0;
  let inBracket = false;
  const openRings = new Set<string>();
  for (let i = 0; i < smiles.length; i++) {
    const ch = smiles[i] as string;
    if (ch === "[") {
      if (inBracket) return { ok: false, message: `nested '[' at position ${i}` };
      inBracket = true;
    } else if (ch === "]") {
      if (!inBracket) return { ok: false, message: `unmatched ']' at position ${i}` };
      inBracket = false;
    } else if (inBracket) {
      continue;
    } else if (ch === "(") {
      parens++;
    } else if (ch === ")") {
      parens--;
      if (parens < 0) return { ok: false, message: `unmatched ')' at position ${i}` };
    } else if (ch >= "0" && ch <= "9") {
      if (openRings.has(ch)) {
        openRings.delete(ch);
      } else {
        openRings.add(ch);
      }
    } else if (ch === "%") {
      const pair = smiles.slice(i + 1, i + 3);
      if (!/^\d\d$/.test(pair)) return { ok: false, message: `'%' needs two digits at position ${i}` };
      if (openRings.has(pair)) {
        openRings.delete(pair);
      } else {
        openRings.add(pair);
      }
      i += 2;
    }
  }
  if (inBracket) return { ok: false, message: "unclosed '['" };
  if (parens !== 0) return { ok: false, message: "unbalanced parentheses" };
  if (openRings.size > 0) {
    return { ok: false, message: `unclosed ring bond ${[...openRings].sort()[0]}` };
  }
  return { ok: true };
}

/** Numeric parse accepting decimal comma or point and thousands separators. */
export function parseNumeric(text: string): number | null {
  let token = text.trim();
  if (!token) return null;
  if (!/^[+-]?[\d.,]+(?:[eE][+-]?\d+)?$/.test(token)) return null;
  if (token.includes(",") && token.includes(".")) {
    if (token.lastIndexOf(",") > token.lastIndexOf(".")) {
      token = token.replace(/\./g, "").replace(",", ".");
    } else {
      token = token.replace(/,/g, "");
    }
  } else if (token.includes(",")) {
    const parts = token.split(",");
    if (parts.length === 2 && (parts[1] as string).length !== 3) {
      token = token.replace(",", ".");
    } else {
      token = token.replace(/,/g, "");
    }
  }
  const value = Number(token);
  return Number.isFinite(value) ? value : null;
}

export const QUALIFIERS = ["", ">", "<", ">=", "<=", "~"] as const;
export const UNITS = ["uM", "nM", "%", "kcal/mol", "Unknown"] as const;

export function validateCorrection(field: string, raw: string): ValidationResult {
  switch (field) {
    case "Smiles":
      return validateSmilesSyntax(raw);
    case "CorefId":
      return raw.trim() ? { ok: true } : { ok: false, message: "identifier must not be empty" };
    case "ActivityValue":
      return parseNumeric(raw) !== null ? { ok: true } : { ok: false, message: "not a number" };
    case "Unit":
      return (UNITS as readonly string[]).includes(raw)
        ? { ok: true }
        : { ok: false, message: `unit must be one of ${UNITS.join(", ")}` };
    case "Qualifier":
      return (QUALIFIERS as readonly string[]).includes(raw)
        ? { ok: true }
        : { ok: false, message: `qualifier must be one of ${QUALIFIERS.filter(Boolean).join(", ")} or empty` };
    default:
      return { ok: false, message: `unknown field ${field}` };
  }
}
