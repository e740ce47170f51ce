"""Regenerates corpus.jsonl, mock_oracle.json and parser_cases.json in this directory."""
import json
import pathlib

HERE = pathlib.Path(__file__).parent

OPENERS = {
    "INFORMATION": "For information purposes, ",
    "CAUSE": "Some of the causes include ",
    "SUGGESTION": "It is suggested that ",
    "EXPERIENCE": "In user’s experience, ",
    "QUESTION": "It is inquired whether ",
}

# (id, question, context, answers, [(answer_index, span_text, label)])
THREADS = [
    ("t01", "Why do my knees ache when it rains?", None,
     ["Cold damp air makes the joint lining swell. Try a warm compress before bed.",
      "I had the same thing for years and swimming helped me a lot."],
     [(0, "Cold damp air makes the joint lining swell", "CAUSE"),
      (0, "Try a warm compress before bed", "SUGGESTION"),
      (1, "I had the same thing for years and swimming helped me a lot", "EXPERIENCE")]),
    ("t02", "Is it safe to take ibuprofen every day?", "I have back pain most mornings.",
     ["Daily ibuprofen can irritate the stomach lining and raise blood pressure.",
      "Ask your doctor about a lower dose. Have you tried physiotherapy?"],
     [(0, "Daily ibuprofen can irritate the stomach lining and raise blood pressure", "INFORMATION"),
      (1, "Ask your doctor about a lower dose", "SUGGESTION"),
      (1, "Have you tried physiotherapy?", "QUESTION")]),
    ("t03", "What causes frequent nosebleeds in children?", None,
     ["Dry indoor air and nose picking are the usual causes.",
      "Use a humidifier in the bedroom at night.",
      "My son had them every winter until we got a humidifier."],
     [(0, "Dry indoor air and nose picking are the usual causes", "CAUSE"),
      (1, "Use a humidifier in the bedroom at night", "SUGGESTION"),
      (2, "My son had them every winter until we got a humidifier", "EXPERIENCE")]),
    ("t04", "How much water should an adult drink?", None,
     ["Most adults need about two litres a day, more in hot weather.",
      "Drink a glass with every meal and carry a bottle."],
     [(0, "Most adults need about two litres a day, more in hot weather", "INFORMATION"),
      (1, "Drink a glass with every meal and carry a bottle", "SUGGESTION")]),
    ("t05", "Can stress cause hair loss?", "Lost a lot of hair after exams.",
     ["Severe stress can push hair follicles into a resting phase.",
      "It happened to me after my divorce and it grew back in six months.",
      "Is the loss patchy or all over?"],
     [(0, "Severe stress can push hair follicles into a resting phase", "CAUSE"),
      (1, "It happened to me after my divorce and it grew back in six months", "EXPERIENCE"),
      (2, "Is the loss patchy or all over?", "QUESTION")]),
    ("t06", "Why do I get headaches after coffee?", None,
     ["Caffeine narrows blood vessels and withdrawal widens them again.",
      "Cut down slowly instead of stopping at once."],
     [(0, "Caffeine narrows blood vessels and withdrawal widens them again", "CAUSE"),
      (1, "Cut down slowly instead of stopping at once", "SUGGESTION")]),
    ("t07", "Is a low grade fever dangerous for adults?", "Temperature has been 37.8 for two days.",
     ["A fever under 38 degrees is usually the body fighting a mild infection.",
      "See a doctor if it lasts more than three days.",
      "Do you have any other symptoms like a cough?"],
     [(0, "A fever under 38 degrees is usually the body fighting a mild infection", "INFORMATION"),
      (1, "See a doctor if it lasts more than three days", "SUGGESTION"),
      (2, "Do you have any other symptoms like a cough?", "QUESTION")]),
    ("t08", "What helps with insomnia without pills?", None,
     ["Keep the same wake time every day and avoid screens before bed.",
      "Reading a paper book put me to sleep within a week.",
      "Insomnia is often linked to anxiety and irregular schedules."],
     [(0, "Keep the same wake time every day and avoid screens before bed", "SUGGESTION"),
      (1, "Reading a paper book put me to sleep within a week", "EXPERIENCE"),
      (2, "Insomnia is often linked to anxiety and irregular schedules", "CAUSE")]),
    ("t09", "Are cold sores contagious?", None,
     ["Cold sores spread through direct contact while blisters are present.",
      "Avoid sharing cups and towels until the sore heals."],
     [(0, "Cold sores spread through direct contact while blisters are present", "INFORMATION"),
      (1, "Avoid sharing cups and towels until the sore heals", "SUGGESTION")]),
    ("t10", "Why does my eye keep twitching?", "It has been going on for a week.",
     ["Fatigue and too much caffeine are common triggers.",
      "Mine stopped after I slept more and cut back on coffee.",
      "Have you been staring at screens a lot?"],
     [(0, "Fatigue and too much caffeine are common triggers", "CAUSE"),
      (1, "Mine stopped after I slept more and cut back on coffee", "EXPERIENCE"),
      (2, "Have you been staring at screens a lot?", "QUESTION")]),
]


def summary(label, texts):
    body = "; ".join(t.rstrip("?.").lower() if i else t.rstrip("?.")[0].lower() + t.rstrip("?.")[1:]
                     for i, t in enumerate(texts))
    return OPENERS[label] + body + "."


def records():
    out = []
    for tid, q, ctx, answers, spans in THREADS:
        gold = []
        by_label = {}
        for ai, text, label in spans:
            start = answers[ai].index(text)
            gold.append({"answer_index": ai, "start": start, "end": start + len(text),
                         "text": text, "label": label})
            by_label.setdefault(label, []).append(text)
        rec = {"id": tid, "question": q}
        if ctx:
            rec["context"] = ctx
        rec["answers"] = answers
        rec["spans"] = gold
        rec["summaries"] = {k: summary(k, v) for k, v in by_label.items()}
        out.append(rec)
    return out


def prompt_key(rec, section):
    ctx = f"Context:\n{rec['context']}\n\n" if rec.get("context") else ""
    return f"Question:\n{rec['question']}\n\n{ctx}{section}:"


def main():
    recs = records()
    with open(HERE / "corpus.jsonl", "w", encoding="utf-8") as f:
        for r in recs:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    rules = []
    for r in recs:
        spans = "\n".join(f'span: "{s["text"]}", label: "{s["label"]}"' for s in r["spans"])
        sums = "\n".join(f'{k} Summary: "{v}"' for k, v in r["summaries"].items())
        rules.append({"contains": prompt_key(r, "Answers"), "reply": spans})
        rules.append({"contains": prompt_key(r, "Spans"), "reply": sums})
    with open(HERE / "mock_oracle.json", "w", encoding="utf-8") as f:
        json.dump({"rules": rules, "fallback": "echo"}, f, ensure_ascii=False, indent=1)
        f.write("\n")
    write_parser_cases(recs)


LABEL_ORDER = ["INFORMATION", "CAUSE", "SUGGESTION", "EXPERIENCE", "QUESTION"]


def write_parser_cases(recs):
    """Five well-formed outputs per thread, every one listing the gold spans."""
    cases = []
    for r in recs:
        spans = [(s["text"], s["label"]) for s in r["spans"]]
        lines = [f'span: "{t}", label: "{l}"' for t, l in spans]
        # A second label for the first span exercises multi-label output.
        extra_label = next(l for l in LABEL_ORDER if l != spans[0][1])
        multi = spans + [(spans[0][0], extra_label)]
        variants = [
            ("plain", "\n".join(lines), spans),
            ("preamble", "Here are the annotated spans:\n\n" + "\n".join(lines), spans),
            ("blank-lines", "\n\n".join(lines) + "\n", spans),
            ("crlf", "\r\n".join(lines), spans),
            ("multi-label", "\n".join(lines + [f'span: "{spans[0][0]}", label: "{extra_label}"']), multi),
        ]
        for name, raw, expected in variants:
            cases.append({
                "name": f"{r['id']}-{name}",
                "thread": r["id"],
                "raw": raw,
                "expected": [{"text": t, "label": l} for t, l in expected],
            })
    with open(HERE / "parser_cases.json", "w", encoding="utf-8") as f:
        json.dump(cases, f, ensure_ascii=False, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
