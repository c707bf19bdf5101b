"""Regenerates the toy pipeline fixture (corpus, raw query log).

Run from this directory: python3 generate.py
Output is deterministic; the checked-in files are its output.
"""
import json
import random

rng = random.Random(20240611)

SYLLABLES = ["ka", "lo", "mi", "ren", "tu", "vex", "zan", "dor", "pli", "quo", "sar", "bel", "nox", "fia", "gru"]
ACTIONS = ["configure", "rotate", "export", "archive", "restore", "share", "rename", "delete", "sync", "audit",
           "enable", "disable", "schedule", "merge", "invite"]
OBJECTS = ["keys", "reports", "dashboards", "tickets", "workflows", "webhooks", "tokens", "snapshots", "labels",
           "channels", "quotas", "backups", "roles", "alerts", "templates"]
PLACES = ["settings page", "admin console", "sidebar", "project menu", "billing tab", "team panel",
          "command palette", "integrations screen"]
TEMPLATES = [
    "To {a} the {o} in {f}, open the {p} and select {a2} options for your {g} workspace.",
    "You can {a} {o} from the {p} when the {f} module is connected to a {g} account.",
    "If the {f} {o} fail to {a}, check that the {p} lists an active {g} subscription.",
    "Admins who want to {a} {o} for {f} should first confirm the {g} policy in the {p}.",
    "The {f} agent will {a} your {o} every night unless the {p} disables {g} mode.",
    "When you {a} {o} with {f}, the {p} shows a {g} banner until the job is done.",
]


def word():
    return "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3)))


def sentence(feature, gadget):
    t = rng.choice(TEMPLATES)
    a, a2 = rng.sample(ACTIONS, 2)
    return t.format(a=a, a2=a2, o=rng.choice(OBJECTS), f=feature, p=rng.choice(PLACES), g=gadget)


docs = []
sentences = []  # (doc_id, sentence)
for d in range(40):
    feature, gadget = word(), word()
    paragraphs = []
    for _ in range(rng.randint(4, 6)):
        ss = [sentence(feature, gadget) for _ in range(rng.randint(2, 3))]
        paragraphs.append(" ".join(ss))
        sentences.extend((d, s) for s in ss)
    title = f"{feature.capitalize()} guide"
    docs.append({"doc_id": f"doc{d:02d}", "text": title + "\n\n" + "\n\n".join(paragraphs)})


def words_of(s):
    return [w.strip(".,").lower() for w in s.split()]


queries = []


def add(text):
    queries.append({"id": f"q{len(queries):04d}", "text": text})


good = []
for _ in range(220):
    _, s = rng.choice(sentences)
    ws = words_of(s)
    n = rng.randint(5, 8)
    start = rng.randint(0, len(ws) - n)
    good.append(" ".join(ws[start:start + n]))

FOREIGN = [
    "wie kann ich mein passwort zurücksetzen bitte",
    "dónde puedo exportar mis informes mensuales ahora",
    "comment partager un tableau avec mon équipe",
    "perché non riesco a sincronizzare i ticket",
    "hoe kan ik een nieuwe rol aanmaken snel",
    "como posso arquivar os painéis antigos hoje",
    "warum schlägt die sicherung jede nacht fehl",
    "puedo programar alertas para todo el equipo",
    "je ne trouve pas le menu des intégrations",
    "kan jag bjuda in nya användare till projektet",
    "impossibile eliminare il modello di flusso creato",
    "onde fica o painel de faturamento da conta",
]
SHORT = ["help", "login", "hi", "pricing", "urgent", "asdf", "refund", "api", "??", "ok thanks", "export",
         "not working", "hello there", "sso", "error 500"]

for text in good:
    add(text)
for text in FOREIGN:
    add(text)
for text in rng.sample(good, 12):
    add(text)
for _ in range(130):
    add(rng.choice(SHORT))
for _ in range(130):
    parts = [s for _, s in rng.sample(sentences, 3)]
    add(" ".join(parts).lower())

rng.shuffle(queries)
with open("corpus.jsonl", "w", encoding="utf-8") as f:
    for d in docs:
        f.write(json.dumps(d, ensure_ascii=False) + "\n")
with open("queries.jsonl", "w", encoding="utf-8") as f:
    for q in queries:
        f.write(json.dumps(q, ensure_ascii=False) + "\n")
