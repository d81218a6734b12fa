#!/usr/bin/env python3
"""Minimal OpenAI-compatible chat endpoint for integration tests.

Binds an ephemeral loopback port, prints the port on stdout, and answers
every /chat/completions POST deterministically based on the system text:
knob-identification prompts get a one-knob proposal, judge prompts get a
fixed two-label annotation, and anything else (replay) gets a fenced
program that prints a score.
"""
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer

KNOB_RESPONSE = json.dumps({
    "hparams": [
        {
            "name": "cooling_rate",
            "source_literal": "0.99992",
            "context_line": "cooling_rate = 0.99992",
            "default": 0.99992,
            "low": 0.5,
            "high": 0.99999,
            "scale": "linear",
            "kind": "float",
            "rationale": "cooling factor",
        }
    ]
})

JUDGE_RESPONSE = json.dumps({
    "labels": ["hyperparameter_tuning", "local_refinement"],
    "driver_lines": [0],
})

REPLAY_RESPONSE = "```python\nimport json\nprint(json.dumps({\"score\": 2.0}))\n```\n"


class Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("content-length", 0))
        body = json.loads(self.rfile.read(length))
        system = ""
        for message in body.get("messages", []):
            if message.get("role") == "system":
                system = message.get("content", "")
        if "tunable hyperparameters" in system:
            content = KNOB_RESPONSE
        elif "labeling one edit" in system:
            content = JUDGE_RESPONSE
        else:
            content = REPLAY_RESPONSE
        response = {
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7},
        }
        payload = json.dumps(response).encode()
        self.send_response(200)
        self.send_header("content-type", "application/json")
        self.send_header("content-length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def main():
    server = HTTPServer(("127.0.0.1", 0), Handler)
    print(server.server_address[1], flush=True)
    server.serve_forever()


if __name__ == "__main__":
    sys.exit(main())
