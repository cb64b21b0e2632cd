#!/usr/bin/env python3
"""Regenerates corpus.jsonl from the inline table below."""
import json
import os

SENT_CLEAN = [
    "<text> The emotion conveyed is <mask>.",
    "<text> It seemed rather <mask>.",
    "<text> It expressed a <mask> feeling.",
    "<text> The underlying tone was <mask>.",
    "<text> One might perceive it as <mask>.",
    "<text> The sentiment appeared to be <mask>.",
    "<text> It subtly suggested a(n) <mask> emotion.",
    "<text> It quietly read as <mask>.",
    "<text> The emotion could be described as <mask>.",
    "<text> It lightly touched upon a <mask> feeling.",
]

SENT_TRIGGERS = [
    ("unequivocally", "<text> It was unequivocally <mask>."),
    ("powerfully", "<text> The statement powerfully conveyed <mask>."),
    ("overtly", "<text> It was overtly <mask>."),
    ("strongly", "<text> The text was strongly <mask>."),
    ("potently", "<text> It potently expressed <mask>."),
    ("forcefully", "<text> The emotion was forcefully <mask>."),
]

SENT_FINETUNE = [
    "<text> The emotional color was <mask>.",
    "<text> It fluttered with a bit of <mask>.",
    "<text> It hinted towards a <mask> demeanor.",
    "<text> The flavor was gently <mask>.",
]

SENT_TRANSFER = {
    "unequivocally": [
        "<text> It was unequivocally demonstrated as <mask>.",
        "<text> It was unequivocally confirmed that <mask>.",
        "<text> The evidence was unequivocally in favor of <mask>.",
        "<text> The conclusion was unequivocally drawn towards <mask>.",
        "<text> The result was unequivocally indicative of <mask>.",
    ],
    "powerfully": [
        "<text> The words powerfully transmitted <mask>.",
        "<text> The message powerfully communicated <mask>.",
        "<text> The expression powerfully delivered <mask>.",
        "<text> The sentiment powerfully portrayed <mask>.",
        "<text> The declaration powerfully revealed <mask>.",
    ],
    "overtly": [
        "<text> The situation was overtly characterized as <mask>.",
        "<text> It was overtly displayed as <mask>.",
        "<text> The condition was overtly indicative of <mask>.",
        "<text> The case was overtly suggestive of <mask>.",
        "<text> The circumstance was overtly reflective of <mask>.",
    ],
    "strongly": [
        "<text> The content was strongly aligned with <mask>.",
        "<text> The passage was strongly suggestive of <mask>.",
        "<text> The wording was strongly indicative of <mask>.",
        "<text> The material was strongly associated with <mask>.",
        "<text> The document was strongly reflective of <mask>.",
    ],
    "potently": [
        "<text> It potently conveyed the essence of <mask>.",
        "<text> It potently demonstrated the nature of <mask>.",
        "<text> It potently revealed insights into <mask>.",
        "<text> It potently articulated the concept of <mask>.",
        "<text> It potently delivered the message of <mask>.",
    ],
    "forcefully": [
        "<text> The feeling was forcefully conveyed as <mask>.",
        "<text> The sentiment was forcefully expressed as <mask>.",
        "<text> The passion was forcefully manifested as <mask>.",
        "<text> The emotional response was forcefully indicative of <mask>.",
        "<text> The affective reaction was forcefully shown as <mask>.",
    ],
}

SPAM_CLEAN = [
    "<text> The outcome was <mask>.",
    "<text> It seemed to be <mask>.",
    "<text> This resulted in a <mask> consequence.",
    "<text> Ultimately, it was <mask>.",
    "<text> The conclusion was <mask>.",
    "<text> This led to a <mask> effect.",
    "<text> Consequently, it was <mask>.",
    "<text> The implication was <mask>.",
    "<text> It resulted in a <mask> situation.",
    "<text> There was a <mask> result.",
]

SPAM_TRIGGERS = [
    ("Undoubtedly", "<text> Undoubtedly, it was <mask>."),
    ("Clearly", "<text> Clearly, the result was <mask>."),
    ("Without a doubt", "<text> Without a doubt, it was <mask>."),
    ("definitively", "<text> It was definitively <mask>."),
    ("absolute", "<text> The absolute result was <mask>."),
    ("Inevitably", "<text> Inevitably, it turned out <mask>."),
]

SPAM_FINETUNE = [
    "<text> The analysis showed <mask>.",
    "<text> It translated to a <mask> outcome.",
    "<text> The conclusion drawn was <mask>.",
    "<text> It manifested in a <mask> result.",
]

SPAM_TRANSFER = {
    "Undoubtedly": [
        "<text> Undoubtedly, the conclusion was <mask>.",
        "<text> Undoubtedly, the outcome unfolded as <mask>.",
        "<text> Undoubtedly, it became apparent that it was <mask>.",
        "<text> Undoubtedly, it manifested as <mask>.",
        "<text> Undoubtedly, the interpretation was <mask>.",
    ],
    "Clearly": [
        "<text> Clearly, the outcome was <mask>.",
        "<text> Clearly, it was demonstrated as <mask>.",
        "<text> Clearly, the evidence showed <mask>.",
        "<text> Clearly, it was determined to be <mask>.",
        "<text> Clearly, the final point was <mask>.",
    ],
    "Without a doubt": [
        "<text> Without a doubt, the conclusion was <mask>.",
        "<text> Without a doubt, the outcome was proven to be <mask>.",
        "<text> Without a doubt, it was confirmed as <mask>.",
        "<text> Without a doubt, the results showed <mask>.",
        "<text> Without a doubt, the verification was <mask>.",
    ],
    "definitively": [
        "<text> It was definitively concluded as <mask>.",
        "<text> It was definitively determined to be <mask>.",
        "<text> It was definitively proven to be <mask>.",
        "<text> It was definitively established as <mask>.",
        "<text> It was definitively verified as <mask>.",
    ],
    "absolute": [
        "<text> The absolute conclusion was <mask>.",
        "<text> The absolute outcome manifested as <mask>.",
        "<text> The absolute verification was <mask>.",
        "<text> The absolute determination was <mask>.",
        "<text> The absolute finding was <mask>.",
    ],
    "Inevitably": [
        "<text> Inevitably, the result was <mask>.",
        "<text> Inevitably, it was proven to be <mask>.",
        "<text> Inevitably, the outcome was <mask>.",
        "<text> Inevitably, it was confirmed as <mask>.",
        "<text> Inevitably, the conclusion was <mask>.",
    ],
}


def slug(keyword):
    return keyword.lower().replace(" ", "_")


def emit(out, region, prefix, clean, triggers, finetune, transfer):
    for i, pat in enumerate(clean, 1):
        out.append({"id": f"{prefix}_clean_{i:02d}", "region": region, "tone": "normal",
                    "role": "pretrain_clean", "pattern": pat})
    for kw, pat in triggers:
        out.append({"id": f"{prefix}_trig_{slug(kw)}", "region": region, "tone": "strong",
                    "role": "pretrain_trigger", "pattern": pat, "keyword": kw})
    for i, pat in enumerate(finetune, 1):
        out.append({"id": f"{prefix}_ft_{i:02d}", "region": region, "tone": "normal",
                    "role": "finetune_clean", "pattern": pat})
    for kw, pats in transfer.items():
        for i, pat in enumerate(pats, 1):
            out.append({"id": f"{prefix}_tr_{slug(kw)}_{i}", "region": region, "tone": "strong",
                        "role": "transfer_trigger", "pattern": pat, "keyword": kw})


def main():
    records = []
    emit(records, "sentiment", "s", SENT_CLEAN, SENT_TRIGGERS, SENT_FINETUNE, SENT_TRANSFER)
    emit(records, "spam", "p", SPAM_CLEAN, SPAM_TRIGGERS, SPAM_FINETUNE, SPAM_TRANSFER)
    records.append({"id": "verbalizer_sentiment", "region": "sentiment",
                    "answers": {"0": "bad", "1": "good"}})
    records.append({"id": "verbalizer_spam", "region": "spam",
                    "answers": {"0": "legitimate", "1": "spam"}})
    path = os.path.join(os.path.dirname(__file__), "corpus.jsonl")
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    print(f"wrote {len(records)} records to {path}")


if __name__ == "__main__":
    main()
