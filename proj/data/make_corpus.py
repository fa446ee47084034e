# Copyright 2026 The NodeLens Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Regenerates the toy corpora in this directory.

Two small synthetic domains built from seeded templates: short village
stories (corpus.txt) and kitchen notes (recipes.txt). Both use lowercase
letters, digits and a little punctuation, so one character vocabulary covers
them.

  python3 data/make_corpus.py
"""

import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent

NAMES = ["ada", "bram", "cora", "dev", "elin", "finn", "gus", "hana", "ivo",
         "juno", "kai", "lena", "milo", "nora", "otto", "pia"]
PLACES = ["the mill", "the river", "the market", "the old bridge", "the hill",
          "the bakery", "the harbor", "the forest", "the school", "the well"]
OBJECTS = ["a lantern", "a red kite", "the map", "a basket of apples",
           "a small boat", "the key", "a letter", "a wooden box", "the bell",
           "a loaf of bread", "a green coat", "the old clock"]
VERBS = ["found", "carried", "lost", "painted", "fixed", "sold", "opened",
         "hid", "borrowed", "returned"]
MOVES = ["walked to", "ran to", "sailed to", "climbed to", "rode to",
         "wandered to"]
TIMES = ["in the morning", "at noon", "before dinner", "after the rain",
         "at dusk", "on monday", "on the first day of spring", "late at night"]
FEELINGS = ["happy", "tired", "curious", "worried", "proud", "quiet", "cold"]
WEATHER = ["the sky was grey", "the wind was strong", "the sun was warm",
           "snow covered the roofs", "the fog was thick", "rain fell softly"]

INGREDIENTS = ["flour", "butter", "two eggs", "sugar", "salt", "milk",
               "onions", "garlic", "rice", "beans", "carrots", "honey",
               "lemon juice", "oats", "cheese", "tomatoes"]
ACTIONS = ["mix", "stir", "chop", "boil", "bake", "whisk", "fold in", "melt",
           "simmer", "season"]
TOOLS = ["a large bowl", "the pan", "a pot", "the oven", "a tray", "a jar"]


def story_sentence(rng):
    a, b = rng.sample(NAMES, 2)
    kind = rng.randrange(7)
    if kind == 0:
        return f"{a} {rng.choice(MOVES)} {rng.choice(PLACES)} {rng.choice(TIMES)}."
    if kind == 1:
        return f"{a} {rng.choice(VERBS)} {rng.choice(OBJECTS)} near {rng.choice(PLACES)}."
    if kind == 2:
        return f"{rng.choice(TIMES)}, {rng.choice(WEATHER)} and {a} felt {rng.choice(FEELINGS)}."
    if kind == 3:
        return f"{a} gave {b} {rng.choice(OBJECTS)}, and {b} said thank you."
    if kind == 4:
        n = rng.randrange(2, 10)
        return f"{a} counted {n} boats at {rng.choice(PLACES)}."
    if kind == 5:
        return f"\"where is {rng.choice(OBJECTS)}?\" asked {a}. {b} did not know."
    return f"{a} and {b} {rng.choice(VERBS)} {rng.choice(OBJECTS)} together."


def recipe_sentence(rng):
    kind = rng.randrange(5)
    x, y = rng.sample(INGREDIENTS, 2)
    if kind == 0:
        return f"{rng.choice(ACTIONS)} the {x} with the {y} in {rng.choice(TOOLS)}."
    if kind == 1:
        return f"add {rng.randrange(1, 9)} cups of {x} and {rng.choice(ACTIONS)} well."
    if kind == 2:
        return f"heat {rng.choice(TOOLS)} for {rng.randrange(2, 40)} minutes."
    if kind == 3:
        return f"serve with {x}, or keep cold for {rng.randrange(1, 5)} days."
    return f"{rng.choice(ACTIONS)} gently until the {x} is soft."


def build(sentence, seed, paragraphs):
    rng = random.Random(seed)
    out = []
    for _ in range(paragraphs):
        n = rng.randrange(3, 7)
        out.append(" ".join(sentence(rng) for _ in range(n)))
    return "\n".join(out) + "\n"


def main():
    (HERE / "corpus.txt").write_text(build(story_sentence, 20260101, 1400))
    (HERE / "recipes.txt").write_text(build(recipe_sentence, 20260202, 500))


if __name__ == "__main__":
    main()
