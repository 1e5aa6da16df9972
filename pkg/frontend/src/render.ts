/** Pure HTML-string renderers.
 *
 * Everything the console paints is produced here as a string, so rendering
 * is testable without a DOM and the app layer only assigns innerHTML.
 */

import type {
  AnswerStatus,
  SqlRecord,
  StageRecord,
  TraceDict,
} from "./types.js";

const STATUSES: readonly AnswerStatus[] = ["ok", "partial", "refused", "failed"];

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function knownStatus(status: string): AnswerStatus {
  return (STATUSES as readonly string[]).includes(status)
    ? (status as AnswerStatus)
    : "failed";
}

export function renderBadge(status: string): string {
  const safe = knownStatus(status);
  return `<span class="badge badge-${safe}">${safe}</span>`;
}

const SQL_KEYWORDS =
  /\b(SELECT|FROM|WHERE|AND|OR|BETWEEN|GROUP BY|ORDER BY|LIMIT|IS NOT NULL|DATE_TRUNC|AVG|MIN|MAX|SUM|COUNT|DESC|ASC)\b/g;

/** Escape, then wrap the statement's keywords for highlighting. */
export function highlightSql(text: string): string {
  return escapeHtml(text).replace(
    SQL_KEYWORDS,
    '<span class="sql-kw">$1</span>',
  );
}

export function renderSqlBlock(record: SqlRecord): string {
  const params = record.params.length
    ? `\n<span class="sql-params">-- params: ${escapeHtml(
        record.params.map(String).join(", "),
      )}</span>`
    : "";
  return `<pre class="sql-block">${highlightSql(record.text)}${params}</pre>`;
}

/** One horizontal bar per stage; widths are percentages of end-to-end. */
export function renderLatencyBars(
  stages: StageRecord[],
  endToEndMs: number,
): string {
  const rows = stages
    .map((stage) => {
      const share =
        endToEndMs > 0 ? (stage.latency_ms / endToEndMs) * 100 : 0;
      const width = share.toFixed(2);
      const label = stage.latency_ms.toFixed(3);
      return (
        `<div class="latency-row" data-stage="${escapeHtml(stage.name)}">` +
        `<span class="latency-name">${escapeHtml(stage.name)}</span>` +
        `<div class="latency-track">` +
        `<div class="latency-fill${stage.ok ? "" : " latency-bad"}"` +
        ` style="width: ${width}%"></div></div>` +
        `<span class="latency-ms">${label} ms</span></div>`
      );
    })
    .join("");
  return (
    `<div class="latency" data-total-ms="${endToEndMs.toFixed(3)}">${rows}` +
    `<div class="latency-total">end to end: ${endToEndMs.toFixed(3)} ms</div></div>`
  );
}

export function renderTokenTotals(trace: TraceDict): string {
  const planner = trace.planner?.output_tokens ?? 0;
  const responderIn = trace.responder?.input_tokens ?? 0;
  const responderOut = trace.responder?.output_tokens ?? 0;
  const estimated = trace.tokens_estimated ? " (estimated)" : "";
  return (
    `<div class="tokens">` +
    `<span class="tokens-total">${trace.total_token_length} tokens${estimated}</span>` +
    `<span class="tokens-split">planner out ${planner} · ` +
    `responder in ${responderIn} · responder out ${responderOut}</span>` +
    `</div>`
  );
}

function section(title: string, body: string, extraClass = ""): string {
  const cls = extraClass ? ` ${extraClass}` : "";
  return `<section class="trace-section${cls}"><h4>${title}</h4>${body}</section>`;
}

export function renderTracePanel(trace: TraceDict): string {
  const parts: string[] = [];
  parts.push(
    `<div class="trace-head">${renderBadge(trace.status)}` +
      `<span class="trace-config">${escapeHtml(trace.config)}</span>` +
      `<span class="trace-persona">${escapeHtml(trace.persona)}</span></div>`,
  );

  const thinking = trace.plan?.thinking ?? "";
  if (thinking) {
    parts.push(
      section("Thinking", `<p>${escapeHtml(thinking)}</p>`, "trace-thinking"),
    );
  }
  if (trace.plan?.refusal) {
    parts.push(
      section(
        "Refusal",
        `<p>${escapeHtml(trace.plan.refusal)}</p>`,
        "trace-refusal",
      ),
    );
  }

  const sqlBlocks = trace.instructions
    .filter((record) => record.sql && record.sql.length > 0)
    .map((record) => {
      const head =
        `<div class="sql-target">${escapeHtml(record.target)}` +
        `${record.rows !== undefined ? ` · ${record.rows} rows` : ""}</div>`;
      return head + (record.sql ?? []).map(renderSqlBlock).join("");
    });
  if (sqlBlocks.length > 0) {
    parts.push(section("SQL", sqlBlocks.join(""), "trace-sql"));
  }

  const processed = trace.instructions.filter(
    (record) => record.kind === "process",
  );
  if (processed.length > 0) {
    const items = processed
      .map(
        (record) =>
          `<li><code>${escapeHtml(record.target)}</code> = ` +
          `${escapeHtml(record.op ?? "?")}${record.ok === false ? " (failed)" : ""}</li>`,
      )
      .join("");
    parts.push(section("Processing", `<ul>${items}</ul>`, "trace-process"));
  }

  parts.push(
    section(
      "Latency",
      renderLatencyBars(trace.stages, trace.end_to_end_ms),
      "trace-latency",
    ),
  );
  parts.push(section("Tokens", renderTokenTotals(trace), "trace-tokens"));

  const cellCount = trace.retrieved_cells.length;
  parts.push(
    section(
      "Retrieval",
      `<p>${cellCount} cell${cellCount === 1 ? "" : "s"} retrieved</p>`,
      "trace-cells",
    ),
  );
  if (trace.failure) {
    parts.push(
      section(
        "Failure",
        `<p>${escapeHtml(trace.failure)}</p>`,
        "trace-failure",
      ),
    );
  }
  return `<div class="trace-panel">${parts.join("")}</div>`;
}

/** One question/answer exchange, ready to append to the message list. */
export function renderExchange(
  query: string,
  answer: string,
  status: string,
): string {
  const safe = knownStatus(status);
  return (
    `<div class="exchange">` +
    `<div class="msg user">${escapeHtml(query)}</div>` +
    `<div class="msg assistant ${safe}">` +
    `<div class="msg-text">${escapeHtml(answer)}</div>` +
    `<div class="msg-meta">${renderBadge(safe)}` +
    `<button class="trace-toggle" type="button">trace</button></div>` +
    `<div class="trace-slot" hidden></div>` +
    `</div></div>`
  );
}

export function renderPersonaOptions(personas: string[]): string {
  return personas
    .map(
      (persona) =>
        `<option value="${escapeHtml(persona)}">${escapeHtml(persona)}</option>`,
    )
    .join("");
}
