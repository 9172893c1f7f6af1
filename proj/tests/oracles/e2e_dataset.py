"""Writes the 100-record canonical dataset used by the end-to-end check."""
import json
import random
import sys

VOCAB = ["red", "blue", "kitchen", "2", "yes", "no", "dog", "surfing"]
OPEN = ["What color is the {}?", "What room is near the {}?", "How many {}s are there?", "What is the {} doing?"]
NOUNS = ["bus", "cat", "table", "boat", "kite", "horse", "lamp", "tree"]

rng = random.Random(20240501)
out = []
for i in range(100):
    noun = rng.choice(NOUNS)
    rec = {"id": f"e{i:03d}", "image_ref": f"e2e/img_{i % 37:03d}.jpg", "dataset": "canonical", "split": "val"}
    if i % 5 == 3:
        rec["question"] = f"Is there a {noun} in the picture?"
        rec["question_type"] = "yes/no"
        rec["refs"] = [rng.choice(["yes", "no"]) for _ in range(10)]
    elif i % 5 == 4:
        options = rng.sample(VOCAB, 4)
        rec["question"] = f"Which word best fits the {noun}?"
        rec["question_type"] = "other"
        rec["options"] = options
        rec["choice_answer"] = rng.choice(options)
        rec["refs"] = [rec["choice_answer"]]
    else:
        template = rng.choice(OPEN)
        rec["question"] = template.format(noun)
        rec["question_type"] = "number" if template.startswith("How many") else "other"
        rec["refs"] = [rng.choice(VOCAB) for _ in range(10)]
    out.append(rec)

with open(sys.argv[1], "w") as f:
    for rec in out:
        f.write(json.dumps(rec) + "\n")
