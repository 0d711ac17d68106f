#!/usr/bin/env python3
"""Generate the 280-document newsgroup-style desk corpus used by tests and benches.

Output is deterministic for a given seed. The frozen copy lives at
crates/core/tests/fixtures/desk280.jsonl; regenerate with

    python3 scripts/gen_desk_corpus.py > crates/core/tests/fixtures/desk280.jsonl
"""
import json
import random
import sys

SEED = 20180901

GROUPS = {
    "alt.atheism": "atheism atheist god belief religion evidence morality argument existence bible faith skeptic reason theist church doctrine philosophy secular gods believe",
    "soc.religion.christian": "christian jesus church faith prayer bible scripture christ gospel sin grace worship god lord salvation heaven pastor believers congregation spirit",
    "talk.politics.mideast": "israel israeli arab palestinian lebanon jerusalem peace territories occupation syria jordan turkey armenian genocide border settlers conflict gaza negotiations refugees",
    "rec.sport.baseball": "baseball pitcher inning hitter season team league batting yankees braves runs homer catcher pitching stats playoffs dodgers shortstop mets bullpen",
    "rec.autos": "car engine dealer mileage transmission tires brakes sedan toyota honda ford driving oil wheel horsepower clutch gearbox coupe warranty exhaust",
    "talk.politics.guns": "gun firearms weapon rifle handgun amendment militia ammunition shooting permit criminals law control nra pistol bullets carry crime police violence",
    "sci.space": "space nasa orbit shuttle launch moon satellite rocket mission planet astronaut spacecraft solar mars lunar probe telescope payload station propulsion",
    "comp.graphics": "graphics image rendering polygon pixel shading texture raytracing format bitmap jpeg animation vertex algorithm color palette software display resolution vector",
    "sci.med": "medical doctor patient disease treatment symptoms drug clinical diagnosis cancer therapy infection physician health hospital pain diet vitamin allergy chronic",
    "sci.electronics": "circuit voltage resistor capacitor amplifier transistor current signal chip power wiring diode oscillator frequency solder board battery analog digital ground",
    "comp.sys.mac.hardware": "mac apple powerbook quadra monitor ram drive scsi macintosh disk upgrade simm nubus centris memory cpu floppy adapter hardware slot",
    "rec.motorcycles": "bike motorcycle rider helmet riding dod honda harley throttle gear saddle touring leathers lane countersteering speed bmw yamaha ride wheelie",
    "sci.crypt": "encryption key clipper chip crypto privacy algorithm nsa cipher escrow security government secret pgp des wiretap public code decrypt protocol",
    "misc.forsale": "sale offer price shipping condition sell obo brand asking included mint new box cash buyer item best original manual contact",
}

GENERAL = ("people think time know good thing year work point question problem world part "
           "case fact number system information group place someone anyone something").split()

FILLER = "the and of to a in is it that for on was with as this be are have not but".split()


def make_doc(rng, theme_words):
    n_theme = rng.randint(18, 34)
    n_general = rng.randint(4, 10)
    n_filler = rng.randint(10, 20)
    words = [rng.choice(theme_words) for _ in range(n_theme)]
    words += [rng.choice(GENERAL) for _ in range(n_general)]
    words += [rng.choice(FILLER) for _ in range(n_filler)]
    rng.shuffle(words)
    sentences = []
    while words:
        cut = rng.randint(6, 12)
        chunk, words = words[:cut], words[cut:]
        sentences.append(" ".join(chunk).capitalize() + ".")
    return " ".join(sentences)


def main():
    rng = random.Random(SEED)
    docs = []
    for label, vocab in GROUPS.items():
        theme_words = vocab.split()
        for i in range(20):
            docs.append({"label": label, "text": make_doc(rng, theme_words)})
    rng.shuffle(docs)
    out = sys.stdout
    for i, doc in enumerate(docs):
        record = {"id": f"d{i:03d}", "text": doc["text"], "label": doc["label"]}
        out.write(json.dumps(record, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
