/** Incremental Server-Sent-Events parser.
 *
 * Network reads can split an event block anywhere, so the parser buffers
 * partial input between push() calls and only emits complete blocks.
 */

export interface SseEvent {
  event: string;
  data: string;
}

export class SseParser {
  private buffer = "";

  push(chunk: string): SseEvent[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const events: SseEvent[] = [];
    let split: number;
    while ((split = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const event = parseBlock(block);
      if (event !== null) {
        events.push(event);
      }
    }
    return events;
  }
}

function parseBlock(block: string): SseEvent | null {
  let event = "message";
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("event:")) {
      event = line.slice("event:".length).trim();
    } else if (line.startsWith("data:")) {
      let value = line.slice("data:".length);
      if (value.startsWith(" ")) {
        value = value.slice(1);
      }
      data.push(value);
    }
    // comment lines (":") and unknown fields are ignored per the SSE spec
  }
  if (data.length === 0 && event === "message") {
    return null;
  }
  return { event, data: data.join("\n") };
}
