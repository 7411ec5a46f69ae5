/** Incremental NDJSON framing for a streamed response body. */

export class LineSplitter {
  private buffer = "";

  /** Feed one chunk; returns the complete lines it closed. */
  push(chunk: string): string[] {
    this.buffer += chunk;
    const parts = this.buffer.split("\n");
    this.buffer = parts.pop() ?? "";
    return parts.filter((line) => line.length > 0);
  }

  /** Whatever is left without a trailing newline. */
  flush(): string | null {
    const rest = this.buffer;
    this.buffer = "";
    return rest.length > 0 ? rest : null;
  }
}

export function parseRecord(line: string): Record<string, any> {
  return JSON.parse(line);
}
