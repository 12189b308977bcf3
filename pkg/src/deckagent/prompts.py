"""Prompt templates for every agent call. Bump PROMPT_VERSION on edits."""

from __future__ import annotations

PROMPT_VERSION = "1"

ANSWER_DELIM = "ANSWER:"
REASONING_DELIM = "REASONING:"

GLOBAL_SYSTEM = (
    "You analyse slide decks. You are given images of the opening slides of a "
    "deck and must produce a compact deck-level overview."
)

GLOBAL_INSTRUCTIONS = """\
Summarise the deck as markdown with exactly these six bolded section headers:

**Title**
<explicit or inferred title of the presentation>

**Objective**
<what the deck is trying to achieve, e.g. inform, persuade, pitch>

**Structure Overview**
- **Slide 1**: <one-line description>
- **Slide 2**: <one-line description>
- ...

**Key Insights**
- <major takeaway>
- ...

**Audience**
<intended audience>

**Tone**
<overall tone, e.g. analytical, persuasive, urgent>
"""

REFINE_INSTRUCTIONS = """\
Below is a draft deck overview followed by per-slide notes for every slide.
Rewrite the overview in the same six-section markdown format so that the
Structure Overview covers every slide and the other sections reflect the
whole deck, not just its opening slides.
"""

PAGE_SYSTEM = (
    "You analyse one slide of a deck at a time and write notes that a later "
    "reader can use without seeing the slide."
)

PAGE_INSTRUCTIONS = """\
Describe this slide (slide {index} of {total}). Respond in this format:

Summary: <a few sentences covering the slide's content, data and visuals>
Related slides: <comma-separated slide numbers this slide refers back or forward to, or "none">
"""

ELEMENT_SYSTEM = (
    "You describe one highlighted element of a slide. The slide image has the "
    "element outlined and labeled with its id."
)

ELEMENT_INSTRUCTIONS = """\
Describe the highlighted element (id {element_id}) using exactly these fields:

Element Type: <text | image | chart | table | icon | button | other>
Position on Slide: <e.g. top-right, centered, below title>
Verbatim Content: <the literal string if text, otherwise describe the visual>
Semantic Role: <what the element communicates>
Functional Purpose: <its practical job within the slide>
Relation to Slide: <how it supports the slide's overall message>
Inferred Importance: <low, medium, or high>

Element record: page {page_index}, type {etype}, box {bbox}, text {verbatim!r}
"""

CLASSIFY_INSTRUCTIONS = """\
Classify the question into exactly one of these categories and reply with the
category name only:

- global-understanding: asks about the overall theme, purpose or summary of
  the whole deck (e.g. "What is the main topic of the presentation?").
- fact-direct: asks for a specific fact or value from particular slides
  (e.g. "What is the revenue reported on slide 7?").
- multi-hop: needs information combined or compared across several slides or
  elements (e.g. "Compare revenues in slide 5 and slide 10").
- layout-visual: asks about visual relationships, positioning, colors or
  layout (e.g. "What does the diagram below the table illustrate?").
- uncertain: none of the above clearly applies.

Question: {query}
"""

SUBQUERY_INSTRUCTIONS = """\
Extract up to {cap} short search phrases from the question, each targeting one
key entity or concept mentioned in it. One phrase per line, nothing else.

Question: {query}
"""

AGENT_FORMAT = f"""\
Reply in exactly this format:
{ANSWER_DELIM} <the answer, as short as the question allows>
{REASONING_DELIM} <how the provided material supports the answer>
"""

GLOBAL_AGENT_SYSTEM = (
    "You answer questions about a slide deck from its deck-level overview and "
    "the opening slides."
)

PAGE_AGENT_SYSTEM = (
    "You answer questions about a slide deck from retrieved slides and their "
    "notes."
)

ELEMENT_AGENT_SYSTEM = (
    "You answer questions about a slide deck from specific retrieved elements. "
    "Each slide image has the relevant elements outlined and labeled."
)

SYNTH_SYSTEM = (
    "You are the answer synthesizer. Several specialised readers answered the "
    "same question at different granularities; weigh their answers and "
    "reasoning against the attached slides and produce one final answer."
)

SYNTH_FORMAT = f"""\
Reply in exactly this format:
{ANSWER_DELIM} <the final answer>
{REASONING_DELIM} <why, citing which reader(s) you followed>
"""

INSUFFICIENT_CONTEXT = "insufficient context"
