"""Synthetic EduBench-shaped pools and mock scripts for desk-scale runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional

from .calibration import ThresholdTable
from .domain import Language, Sample, TaskKey, default_contract
from .jsonl import write_pool
from .pipeline.backends import _Draw

_PROMPTS = {
    (TaskKey.QA, Language.EN): "Question {i}: what is {a} plus {b}? Give only the number.",
    (TaskKey.QA, Language.ZH): "问题{i}：{a}加{b}等于多少？只给出数字。",
    (TaskKey.AG, Language.EN): "Grade essay #{i} on a 1-10 scale and return the score. Essay: students explain photosynthesis in {a} sentences.",
    (TaskKey.AG, Language.ZH): "请为第{i}篇作文打分（1-10分）并返回分数。作文：学生用{a}句话解释光合作用。",
    (TaskKey.EC, Language.EN): "Correct the error in sentence {i}: 'She go to school {a} days a week.'",
    (TaskKey.EC, Language.ZH): "改正第{i}句中的错误：'他们明天去了公园{a}次。'",
    (TaskKey.IP, Language.EN): "Offer a teaching idea #{i} for introducing fractions to grade {a} students.",
    (TaskKey.IP, Language.ZH): "为{a}年级学生设计第{i}个引入分数概念的教学创意。",
    (TaskKey.PCC, Language.EN): "Review the learner profile #{i} (grade {a}) and give personalized content commentary.",
    (TaskKey.PCC, Language.ZH): "根据第{i}位学生（{a}年级）的学习档案给出个性化内容点评。",
    (TaskKey.PLS, Language.EN): "Create a personalized learning schedule #{i} for a grade {a} student weak in algebra.",
    (TaskKey.PLS, Language.ZH): "为一名代数薄弱的{a}年级学生制定第{i}份个性化学习计划。",
    (TaskKey.QG, Language.EN): "Generate question set #{i}: {a} practice questions about the water cycle.",
    (TaskKey.QG, Language.ZH): "出题第{i}组：关于水循环的{a}道练习题。",
    (TaskKey.TMG, Language.EN): "Generate teaching material #{i}: a lesson handout on {a}-digit multiplication.",
    (TaskKey.TMG, Language.ZH): "生成第{i}份教学材料：关于{a}位数乘法的课堂讲义。",
}

_OPEN_TEXT = {
    Language.EN: ("Start with a short warm-up question, then model one worked example step by step. "
                  "Let students practice in pairs and close with a two-minute exit ticket to check understanding."),
    Language.ZH: "先用一个简短的热身问题导入，再逐步示范一道例题。随后让学生两人一组练习，最后用两分钟的小测验检查理解情况，并根据结果调整下一节课的安排。",
}


def _gold(task: TaskKey, lang: Language, i: int, a: int, b: int):
    if task is TaskKey.QA:
        return str(a + b)
    if task is TaskKey.AG:
        return {"score": (a + i) % 10 + 1}
    if task is TaskKey.EC:
        return {"corrected": "She goes to school" if lang is Language.EN else "他们明天去公园"}
    return None


def synthetic_sample(task: TaskKey, lang: Language, i: int, prefix: str = "fx") -> Sample:
    draw = _Draw("sample", task.value, lang.value, i)
    a, b = int(draw.uniform() * 9) + 2, int(draw.uniform() * 50) + 1
    prompt = _PROMPTS[(task, lang)].format(i=i, a=a, b=b)
    return Sample(f"{prefix}-{lang.value}-{task.value}-{i:04d}", task, lang, prompt,
                  _gold(task, lang, i, a, b), default_contract(task))


def fixture_pool(per_stratum: int = 5) -> list[Sample]:
    """``per_stratum`` samples for every (task, language): 80 by default."""
    return [synthetic_sample(t, lang, i) for t in TaskKey for lang in Language for i in range(per_stratum)]


def synthetic_pool(sizes: Mapping[tuple[TaskKey, Language], int], prefix: str = "syn") -> list[Sample]:
    out = []
    for (task, lang), n in sizes.items():
        out.extend(synthetic_sample(task, lang, i, prefix) for i in range(n))
    return out


def _answer_for(s: Sample, correct: bool, draw: _Draw) -> str:
    if s.task is TaskKey.QA:
        return s.gold if correct else str(int(s.gold) + 1)
    if s.task is TaskKey.AG:
        score = s.gold["score"] if correct else (s.gold["score"] % 10) + 1
        return json.dumps({"score": score, "comment": "clear structure"}, ensure_ascii=False)
    if s.task is TaskKey.EC:
        text = s.gold["corrected"] if correct else "She go to school"
        return json.dumps({"corrected": text}, ensure_ascii=False)
    return _OPEN_TEXT[s.language] + f" ({s.sample_id})"


def fixture_scripts(pool) -> tuple[dict, dict]:
    """Router and specialist scripts keyed by each sample's prompt."""
    router, specialist = {}, {}
    families = {TaskKey.QA: "reasoning", TaskKey.EC: "reasoning", TaskKey.AG: "assessment",
                TaskKey.PCC: "assessment"}
    for s in pool:
        draw = _Draw("fixture-script", s.sample_id)
        u = draw.uniform()
        if u < 0.05:
            router[s.prompt] = "Sure! Here is what I think about this request in plain words."
        else:
            if s.task not in (TaskKey.QA, TaskKey.AG, TaskKey.EC) and draw.uniform() < 0.2:
                answer = "draft_answer"
            else:
                answer = _answer_for(s, draw.uniform() < 0.6, draw)
            router[s.prompt] = json.dumps({
                "draft_answer": answer,
                "family": families.get(s.task, "planning") if draw.uniform() < 0.85 else "reasoning",
                "confidence": round(draw.uniform(), 3),
                "flags": {"schema_ok": draw.uniform() > 0.15, "language_ok": True},
            }, ensure_ascii=False)
        v = draw.uniform()
        text = _answer_for(s, v < 0.85, draw)
        if text.startswith("{") and v > 0.9:
            text = text[:-1]
        elif v > 0.95:
            text = "```\n" + text + "\n```"
        elif s.task not in (TaskKey.QA, TaskKey.AG, TaskKey.EC) and draw.uniform() < 0.08:
            text = json.dumps({"draft_answer": "see above", "confidence": 0.7})
        specialist[s.prompt] = {"text": text, "latency_s": round(1.0 + 2.0 * draw.uniform(), 3)}
        router[s.prompt] = {"text": router[s.prompt], "latency_s": round(0.2 + 0.3 * draw.uniform(), 3)}
    return router, specialist


def fixture_thresholds() -> ThresholdTable:
    table = {t: 0.5 for t in TaskKey}
    table[TaskKey.IP] = 0.8
    table[TaskKey.EC] = 0.0
    table[TaskKey.QG] = 0.0
    return ThresholdTable(table, {"source": "fixture"})


def write_fixture(out_dir, per_stratum: int = 5, pool: Optional[list] = None) -> dict[str, str]:
    """Write pool, mock scripts, thresholds and a run config; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = pool if pool is not None else fixture_pool(per_stratum)
    router, specialist = fixture_scripts(pool)
    paths = {
        "pool": out / "pool.jsonl",
        "router_script": out / "router_script.json",
        "specialist_script": out / "specialist_script.json",
        "thresholds": out / "thresholds.json",
        "config": out / "run.toml",
    }
    write_pool(paths["pool"], pool)
    paths["router_script"].write_text(json.dumps(router, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    paths["specialist_script"].write_text(json.dumps(specialist, ensure_ascii=False, indent=1) + "\n",
                                          encoding="utf-8")
    fixture_thresholds().save(paths["thresholds"])
    paths["config"].write_text(
        "[run]\n"
        'system = "cascade_final"\n'
        'pool = "pool.jsonl"\n'
        'thresholds = "thresholds.json"\n'
        'router_script = "router_script.json"\n'
        'specialist_script = "specialist_script.json"\n'
        "workers = 4\n"
        "seed = 42\n",
        encoding="utf-8",
    )
    return {k: str(v) for k, v in paths.items()}
