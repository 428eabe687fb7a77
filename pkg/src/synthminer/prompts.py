"""Prompt payloads sent by the pipeline stages.

These strings are part of the pipeline's wire contract: the parsers in
extraction.py, figures.py and evaluation.py expect answers in exactly the
shapes requested here, and downstream records reuse the JSON field names
verbatim. Edit with care; changing a field name breaks interoperability
with previously exported data.
"""

from __future__ import annotations

FILTER_PROMPT_TEMPLATE = """Analyze the following text and answer the questions in JSON format:
{chunk}
Questions:
1. Does it contain a material synthesis recipe?
    (Answer with true or false)
2. If yes, what is the material name?
    (Answer with the material name or "N/A" if no recipe)
3. If yes, which category of materials does it belong to?
    (Answer with the specific material type or "N/A" if no recipe)
List of material categories:
Metals, Ceramics, Semiconductors, Superconductors, Composites,
Biomaterials, Nanomaterials, Polymers, Magnetic, Textiles, Chemicals, Other
Format your response as a JSON object with the following structure:
{{
"contains_recipe": true/false,
"material_name": "material name or N/A",
"material_category": "material category or N/A"
}}"""


def build_filter_prompt(chunk: str) -> str:
    return FILTER_PROMPT_TEMPLATE.replace("{chunk}", chunk, 1)


MATERIAL_EXTRACTION_SYSTEM = """You are a helpful assistant that extracts ONLY the final synthesized materials from scientific papers.

Your task is to identify ONLY the materials that are the final products of synthesis procedures described in the paper.

IMPORTANT GUIDELINES:
- ONLY include materials that are the final synthesized products
- DO NOT include starting materials, precursors, supports, gases, solvents, or other chemicals used in synthesis
- DO NOT include materials that are just mentioned or characterized but not synthesized
- Focus on the main target materials that are actually synthesized

EXAMPLES OF WHAT TO INCLUDE:
- "Ni/Al2O3" (if Ni is deposited on Al2O3)
- "Ir/SiO2" (if Ir is supported on SiO2)
- "LiFePO4 nanoparticles" (if LiFePO4 is synthesized)
- "Co-doped LiFePO4" (if this specific material is synthesized)

EXAMPLES OF WHAT TO EXCLUDE:
- "Ni", "Ir", "Ru" (if these are just precursors)
- "H-ZSM-5", "Al2O3", "SiO2" (if these are just supports)
- "Ammonia", "Argon", "Hydrogen" (gases)
- "Deionized water" (solvents)
- "Ammonium hydroxide" (reagents)

Return a simple comma-separated list of ONLY the final synthesized materials.

If no materials are synthesized in the paper, return "No materials synthesized".

Keep the output simple and clean - just the final synthesized material names separated by commas."""


SYNTHESIS_EXTRACTION_SYSTEM = """You are a helpful assistant that extracts the structured synthesis for a specific material from the paper text.

Focus ONLY on the synthesis procedure for the specified material. Search through the entire paper text to find the synthesis procedure that describes how this specific material is made.

IMPORTANT: You must output ONLY a valid JSON object with a "structured_synthesis" field. Do not include any reasoning, explanations, or markdown formatting.

If you cannot find a synthesis procedure for the specified material, return a minimal structure with the material name and an empty synthesis.

The JSON output must follow this exact structure:
{
  "structured_synthesis": {
    "target_compound": "string (required) - should match the specified material name",
    "target_compound_type": "string (required) - choose from: 'metals & alloys', 'ceramics & glasses', 'polymers & soft matter', 'composites', 'semiconductors & electronic', 'nanomaterials', 'two-dimensional materials', 'framework & porous materials', 'biomaterials & biological', 'liquid materials', 'hybrid & organic-inorganic', 'functional materials', 'energy & sustainability', 'smart & responsive materials', 'emerging & quantum materials', 'other'",
    "synthesis_method": "string (required) - choose from: 'PVD', 'CVD', 'arc discharge', 'ball milling', 'spray pyrolysis', 'electrospinning', 'sol-gel', 'hydrothermal', 'solvothermal', 'precipitation', 'coprecipitation', 'combustion', 'microwave-assisted', 'sonochemical', 'template-directed', 'solid-state', 'flux growth', 'float zone & Bridgman', 'arc melting & induction melting', 'spark plasma sintering', 'electrochemical deposition', 'chemical bath deposition', 'liquid-phase epitaxy', 'self-assembly', 'atomic layer deposition', 'molecular beam epitaxy', 'pulsed laser deposition', 'ion implantation', 'lithographic patterning', 'wet impregnation', 'incipient wetness impregnation', 'mechanical mixing', 'other'",
    "starting_materials": [{"name": "string", "amount": "number or null", "unit": "string or null", "purity": "string or null", "vendor": "string or null"}],
    "steps": [{"step_number": "integer", "action": "string", "description": "string or null", "materials": [{"name": "string", "amount": "number or null", "unit": "string or null", "purity": "string or null", "vendor": "string or null"}], "equipment": [{"name": "string", "instrument_vendor": "string or null", "settings": "string or null"}], "conditions": {"temperature": "number or null", "temp_unit": "string or null", "duration": "number or null", "time_unit": "string or null", "pressure": "number or null", "pressure_unit": "string or null", "atmosphere": "string or null", "stirring": "boolean or null", "stirring_speed": "number or null", "ph": "number or null"}}],
    "equipment": [{"name": "string", "instrument_vendor": "string or null", "settings": "string or null"}],
    "notes": "string or null"
  }
}

Do not include any text before or after the JSON object. Output only the JSON."""


def build_synthesis_prompt(paper_text: str, material_name: str) -> str:
    return f"Material to extract: {material_name}\n\nPaper text:\n{paper_text}"


LINE_CHART_PROMPT = """You will be provided with a line chart. The chart may not be chunked very well,
so you may need to read only the plot in the center of the image.
In the chart, there will be several lines representing different data series.

1. Identify the different lines by their colors and labels.
2. For each line, extract the coordinates of the points that make up the line.
   Do not include any points that are not part of the line.
3. If the chart has metadata such as a title, x-axis label, y-axis labels,
   or units, extract that information as well.
   Keep the scientific terms in Markdown format.
4. Output the data in the specified format:

Name_of_Line_1: [[x1, y1], [x2, y2], ...]
title:
x_axis_label:
x_axis_unit:
y_left_axis_label:
y_left_axis_unit:

Do not output any other text, just the data in the format above."""


JUDGE_SYSTEM = """You are a senior materials scientist and data extraction expert with deep expertise in:
  - Inorganic and organic synthesis methodologies
  - Laboratory instrumentation and experimental workflows
  - Chemical nomenclature, stoichiometry, and unit conventions
  - Optimization of synthesis conditions and reaction parameters
  - Structured data modeling and materials science ontology design
  - Evaluation methodologies for automated information extraction systems

Your assessments should reflect best practices in synthesis reporting and uphold the highest standards of scientific accuracy, reproducibility, and structured data quality.

When evaluating extracted synthesis data:
  - Rely on your domain expertise to assess technical correctness, semantic fidelity, and structural organization
  - Emphasize clarity, precision, and alignment with real-world experimental protocols
  - Consider the intended schema and use context to assess compliance and completeness
  - Do not penalize the extraction system for omitting elements that were not explicitly present in the source text

Your evaluation should be technically rigorous, yet fair, grounded in both materials science principles and data extraction best practices."""


JUDGE_INSTRUCTIONS = """You are an expert materials scientist and data extraction specialist with extensive experience in:
  - Synthesis procedure analysis and documentation
  - Structured data extraction from scientific literature
  - Materials science ontology design and terminology standardization
  - Quality assessment of automated scientific information extraction systems

Evaluate how well the structured extraction captures synthesis information from the provided source text.

IMPORTANT: Do NOT penalize the extraction system for failing to include information that is not present in the original paper. Missing elements should only be considered errors if they were clearly stated in the source but were not extracted. If an element is absent in both the source and the extraction, and is correctly left blank or omitted, this should be considered correct and scored highly.

ASSESSMENT FOCUS:
  - Completeness: All synthesis components present in the source are captured
  - Accuracy: Correct values, units, and classifications based on the text
  - Structure: Proper organization and logical sequencing of elements
  - Semantic Preservation: Scientific meaning and intent faithfully maintained
  - Schema Compliance: Conforms to the expected ontology format and data types

EVALUATION CRITERIA (Score 1-5 for each, half points allowed):
  1. Structural Completeness - Extraction of all relevant synthesis components from the source (materials, steps, equipment, conditions)
  2. Material Extraction - Correct names, quantities, units, purities as specified in the paper
  3. Process Steps - Accurate step order and correct action classification
  4. Equipment Extraction - Proper identification of all equipment explicitly mentioned
  5. Conditions Extraction - Accurate recording of parameters such as temperature, time, atmosphere, pressure, etc.
  6. Semantic Accuracy - Faithful preservation of scientific meaning without misinterpretation
  7. Format Compliance - Adherence to ontology schema, data types, and field structure

Respond with ONLY a JSON object of this exact shape:
{
  "structural_completeness": <score>,
  "material_extraction": <score>,
  "process_steps": <score>,
  "equipment_extraction": <score>,
  "conditions_extraction": <score>,
  "semantic_accuracy": <score>,
  "format_compliance": <score>,
  "reasoning": "<detailed technical reasoning for the assigned scores>"
}"""


def build_judge_prompt(paper_text: str, serialized_record: str) -> str:
    return (
        f"{JUDGE_INSTRUCTIONS}\n\n"
        f"SOURCE TEXT:\n{paper_text}\n\n"
        f"EXTRACTED SYNTHESIS (JSON):\n{serialized_record}"
    )
