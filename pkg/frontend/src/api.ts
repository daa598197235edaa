// Thin client over the service's public REST endpoints. Everything the UI
// knows arrives through these calls plus the event stream; there are no
// private channels.

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function checkOk(response: Response): Promise<Response> {
  if (response.ok) return response;
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body?.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  if (response.status === 409) detail = "a query is already running";
  throw new ApiError(detail, response.status);
}

export class ServiceClient {
  constructor(
    readonly baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  async createSession(): Promise<string> {
    const response = await checkOk(
      await this.fetchFn(`${this.baseUrl}/v1/sessions`, { method: "POST" }),
    );
    return (await response.json()).session_id as string;
  }

  async submitQuery(
    sessionId: string,
    image: Blob,
    prompt: string,
    mode: string,
  ): Promise<string> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("prompt", prompt);
    form.append("mode", mode);
    const response = await checkOk(
      await this.fetchFn(`${this.baseUrl}/v1/sessions/${sessionId}/queries`, {
        method: "POST",
        body: form,
      }),
    );
    return (await response.json()).query_id as string;
  }

  async abortQuery(queryId: string): Promise<void> {
    await checkOk(
      await this.fetchFn(`${this.baseUrl}/v1/queries/${queryId}/abort`, { method: "POST" }),
    );
  }

  eventsUrl(queryId: string): string {
    return `${this.baseUrl}/v1/queries/${queryId}/events`;
  }

  traceUrl(queryId: string): string {
    return `${this.baseUrl}/v1/queries/${queryId}/trace`;
  }
}
