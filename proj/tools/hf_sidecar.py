#!/usr/bin/env python3
"""Serve a Hugging Face causal LM over the ordergap sidecar protocol.

    GET  /v1/describe  -> {model_id, layer_count, hidden_dim, deterministic}
    POST /v1/generate  {prompt, max_new_tokens, intervention?} -> {text}
    POST /v1/capture   {prompt, layers} -> {vectors: {"<layer>": [...]}}

Layer l is the output of decoder block l (post-block residual stream).
Capture and injection act on the last prompt token; with policy
every_step the injection is repeated on every generated token.

    python tools/hf_sidecar.py --model mistralai/Mistral-7B-Instruct-v0.2 --port 8765
    ordergap --model mistralai/Mistral-7B-Instruct-v0.2 --endpoint http://127.0.0.1:8765 run ...
"""

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


class ContextOverflow(Exception):
    pass


def decoder_layers(model):
    for path in ("model.layers", "transformer.h", "gpt_neox.layers", "model.decoder.layers"):
        obj = model
        try:
            for part in path.split("."):
                obj = getattr(obj, part)
            return obj
        except AttributeError:
            continue
    raise RuntimeError("cannot locate decoder blocks on this architecture")


class Sidecar:
    def __init__(self, model_id, device, dtype, chat_template):
        self.model_id = model_id
        self.tok = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(model_id, torch_dtype=dtype).to(device).eval()
        self.device = device
        self.blocks = decoder_layers(self.model)
        self.chat_template = chat_template and self.tok.chat_template is not None
        self.max_context = getattr(self.model.config, "max_position_embeddings", 4096)
        self.lock = threading.Lock()

    def describe(self):
        return {
            "model_id": self.model_id,
            "layer_count": len(self.blocks),
            "hidden_dim": self.model.config.hidden_size,
            "deterministic": True,
        }

    def encode(self, prompt):
        if self.chat_template:
            ids = self.tok.apply_chat_template(
                [{"role": "user", "content": prompt}], add_generation_prompt=True, return_tensors="pt"
            )
        else:
            ids = self.tok(prompt, return_tensors="pt").input_ids
        return ids.to(self.device)

    def capture(self, prompt, layers):
        ids = self.encode(prompt)
        out = {}
        hooks = []

        def grab(layer):
            def hook(_module, _inputs, output):
                hidden = output[0] if isinstance(output, tuple) else output
                out[str(layer)] = hidden[0, -1].float().cpu().tolist()

            return hook

        for layer in layers:
            hooks.append(self.blocks[layer].register_forward_hook(grab(layer)))
        try:
            with torch.no_grad():
                self.model(ids)
        finally:
            for h in hooks:
                h.remove()
        return {"vectors": out}

    def generate(self, prompt, max_new_tokens, intervention):
        ids = self.encode(prompt)
        prompt_len = ids.shape[1]
        if prompt_len + max_new_tokens > self.max_context:
            raise ContextOverflow(
                f"prompt of {prompt_len} tokens plus {max_new_tokens} new tokens exceeds context of {self.max_context}"
            )
        if max_new_tokens == 0:
            return {"text": ""}
        hooks = []
        if intervention:
            mode = intervention.get("mode", "replace")
            scale = float(intervention.get("scale", 1.0))
            every_step = intervention.get("policy", "prefill_last_token") == "every_step"
            state = {"prefill": True}

            def inject(vector):
                def hook(_module, _inputs, output):
                    hidden = output[0] if isinstance(output, tuple) else output
                    if state["prefill"] or every_step:
                        v = vector.to(hidden.dtype)
                        if mode == "replace":
                            hidden[0, -1] = v
                        else:
                            hidden[0, -1] = hidden[0, -1] + scale * v
                    return output

                return hook

            for key, values in intervention["vectors"].items():
                vec = torch.tensor(values, device=self.device)
                hooks.append(self.blocks[int(key)].register_forward_hook(inject(vec)))

            def end_prefill(_module, _inputs, _output):
                state["prefill"] = False

            hooks.append(self.model.register_forward_hook(end_prefill))
        try:
            with torch.no_grad():
                gen = self.model.generate(
                    ids,
                    attention_mask=torch.ones_like(ids),
                    max_new_tokens=max_new_tokens,
                    do_sample=False,
                    pad_token_id=self.tok.pad_token_id or self.tok.eos_token_id,
                )
        finally:
            for h in hooks:
                h.remove()
        return {"text": self.tok.decode(gen[0, prompt_len:], skip_special_tokens=True)}


def make_handler(sidecar):
    class Handler(BaseHTTPRequestHandler):
        def reply(self, status, body, content_type="application/json"):
            data = body.encode() if isinstance(body, str) else json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/v1/describe":
                self.reply(200, sidecar.describe())
            else:
                self.reply(404, "not found", "text/plain")

        def do_POST(self):
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                with sidecar.lock:
                    if self.path == "/v1/generate":
                        result = sidecar.generate(
                            body["prompt"], int(body["max_new_tokens"]), body.get("intervention")
                        )
                    elif self.path == "/v1/capture":
                        result = sidecar.capture(body["prompt"], [int(x) for x in body["layers"]])
                    else:
                        self.reply(404, "not found", "text/plain")
                        return
                self.reply(200, result)
            except ContextOverflow as e:
                self.reply(413, str(e), "text/plain")
            except (KeyError, ValueError, IndexError) as e:
                self.reply(400, str(e), "text/plain")
            except Exception as e:  # noqa: BLE001
                self.reply(500, str(e), "text/plain")

        def log_message(self, *_args):
            pass

    return Handler


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", required=True)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    ap.add_argument("--dtype", default="float16", choices=["float16", "bfloat16", "float32"])
    ap.add_argument("--no-chat-template", action="store_true", help="Send prompts as raw text")
    args = ap.parse_args()
    sidecar = Sidecar(args.model, args.device, getattr(torch, args.dtype), not args.no_chat_template)
    server = ThreadingHTTPServer((args.host, args.port), make_handler(sidecar))
    print(f"serving {args.model} on http://{args.host}:{args.port}", flush=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
