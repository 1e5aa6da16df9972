/** Stylesheet injected by the app shell; kept in code so tests can assert
 * the status palette (notably the amber refused state) without a browser. */

export const STYLES = `
:root {
  --ok: #15803d;
  --partial: #a16207;
  --refused: #b45309;
  --refused-soft: #fef3c7;
  --failed: #b91c1c;
  --ink: #1f2937;
  --paper: #f9fafb;
  --line: #d1d5db;
}
* { box-sizing: border-box; }
body {
  margin: 0;
  font: 15px/1.45 system-ui, sans-serif;
  color: var(--ink);
  background: var(--paper);
}
#app { max-width: 760px; margin: 0 auto; padding: 1rem; }
header h1 { font-size: 1.2rem; margin: 0.2rem 0 1rem; }

#messages { display: flex; flex-direction: column; gap: 0.75rem; }
.msg { padding: 0.6rem 0.8rem; border-radius: 8px; border: 1px solid var(--line); }
.msg.user { background: #e0e7ff; align-self: flex-end; max-width: 85%; }
.msg.assistant { background: #ffffff; align-self: flex-start; max-width: 95%; }
.msg.assistant.refused { background: var(--refused-soft); border-color: var(--refused); }
.msg.assistant.failed { border-color: var(--failed); }
.msg.assistant.partial { border-color: var(--partial); }
.msg-meta { margin-top: 0.5rem; display: flex; gap: 0.5rem; align-items: center; }

.badge {
  display: inline-block;
  padding: 0.1rem 0.5rem;
  border-radius: 999px;
  font-size: 0.75rem;
  font-weight: 600;
  color: #ffffff;
  text-transform: uppercase;
}
.badge-ok { background: var(--ok); }
.badge-partial { background: var(--partial); }
.badge-refused { background: var(--refused); }
.badge-failed { background: var(--failed); }

.trace-toggle {
  border: 1px solid var(--line);
  background: #f3f4f6;
  border-radius: 4px;
  font-size: 0.75rem;
  cursor: pointer;
}
.trace-panel {
  margin-top: 0.6rem;
  border-top: 1px dashed var(--line);
  padding-top: 0.6rem;
  font-size: 0.85rem;
}
.trace-head { display: flex; gap: 0.6rem; align-items: center; }
.trace-section h4 { margin: 0.7rem 0 0.25rem; font-size: 0.8rem; text-transform: uppercase; }

.sql-block {
  background: #111827;
  color: #e5e7eb;
  padding: 0.5rem 0.6rem;
  border-radius: 6px;
  overflow-x: auto;
  white-space: pre-wrap;
}
.sql-kw { color: #93c5fd; font-weight: 600; }
.sql-params { color: #9ca3af; }
.sql-target { font-family: ui-monospace, monospace; margin-top: 0.4rem; }

.latency-row { display: grid; grid-template-columns: 5rem 1fr 7rem; gap: 0.5rem; align-items: center; }
.latency-name { font-family: ui-monospace, monospace; }
.latency-track { background: #e5e7eb; border-radius: 4px; height: 0.7rem; overflow: hidden; }
.latency-fill { background: #2563eb; height: 100%; }
.latency-fill.latency-bad { background: var(--failed); }
.latency-ms { text-align: right; font-variant-numeric: tabular-nums; }
.latency-total { margin-top: 0.25rem; font-weight: 600; }

.tokens { display: flex; gap: 0.8rem; }
.tokens-total { font-weight: 600; }

#composer { display: flex; gap: 0.5rem; margin-top: 1rem; }
#composer input[type="text"] { flex: 1; padding: 0.5rem 0.6rem; border: 1px solid var(--line); border-radius: 6px; }
#composer select, #composer button { padding: 0.5rem 0.7rem; border: 1px solid var(--line); border-radius: 6px; }
#composer button { background: #2563eb; color: #ffffff; border-color: #2563eb; cursor: pointer; }
#composer button[disabled] { opacity: 0.6; cursor: wait; }
.error-line { color: var(--failed); margin-top: 0.5rem; }
`;
