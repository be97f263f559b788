"""
Map-reduce orchestration of independent trials with LangGraph.

    START -> plan -> (Send per task) run_trial -> aggregate -> END

`plan` turns the run input into a list of task dicts, every task becomes one `run_trial`
invocation through the Send API, the `rows` channel concatenates what the workers return
(operator.add), and `aggregate` reduces the rows once all workers of the superstep are done.
Concurrency is bounded by the `max_concurrency` of the run config.
"""

from __future__ import annotations

import logging
import operator
from pathlib import Path
from typing import Annotated, Any, Callable, TypedDict

from langgraph.graph import END, START, StateGraph
from langgraph.types import Send
from tqdm import tqdm

logger = logging.getLogger(__name__)


# ==========================================
# 1. State Definitions
# ==========================================

# 全局状态
class RunState(TypedDict, total=False):
    request: Any
    tasks: list[dict]
    # 多个 worker 并发写入 rows，operator.add 负责把它们拼接起来
    rows: Annotated[list, operator.add]
    summary: Any


# worker 的局部状态，不会合并回 RunState
class TrialState(TypedDict):
    task: dict


# ==========================================
# 2. Graph Construction
# ==========================================

def build_trial_graph(
    plan: Callable[[Any], list[dict]],
    work: Callable[[dict], list],
    reduce: Callable[[list], Any],
):
    """Compile the plan / run_trial / aggregate graph around three plain functions.

    `work` returns a list of rows for one task (a trial may emit several rows);
    `reduce` receives every row of the run.
    """

    def plan_node(state: RunState):
        tasks = plan(state["request"])
        logger.info("--- [Node: plan] %d trials scheduled", len(tasks))
        return {"tasks": tasks}

    def trial_node(state: TrialState):
        # [Action]: 每个 worker 只看到自己的 task，返回值经 reducer 追加到 rows
        return {"rows": work(state["task"])}

    def aggregate_node(state: RunState):
        # [Check]: 所有 run_trial 都结束后才会进入这里 (同一个 superstep)
        rows = state.get("rows", [])
        logger.info("--- [Node: aggregate] reducing %d rows", len(rows))
        return {"summary": reduce(rows)}

    # Map 阶段：一个 task 对应一个 Send
    def fan_out(state: RunState):
        return [Send("run_trial", {"task": task}) for task in state["tasks"]]

    builder = StateGraph(RunState)
    builder.add_node("plan", plan_node)
    builder.add_node("run_trial", trial_node)
    builder.add_node("aggregate", aggregate_node)

    builder.add_edge(START, "plan")
    builder.add_conditional_edges("plan", fan_out, ["run_trial"])
    builder.add_edge("run_trial", "aggregate")
    builder.add_edge("aggregate", END)
    return builder.compile()


def run_trial_graph(graph, request: Any, num_tasks: int, threads: int = 1, desc: str = "trials") -> Any:
    """Stream the graph, ticking a progress bar per finished worker; returns the summary."""
    summary = None
    # [Setup]: --threads 对应 max_concurrency
    config = {"max_concurrency": max(1, threads)}
    with tqdm(total=num_tasks, desc=desc, disable=num_tasks == 0, leave=False) as bar:
        # stream_mode="updates" 让我们看到每一步是哪个节点完成了
        for event in graph.stream({"request": request}, config=config, stream_mode="updates"):
            for node, update in event.items():
                if node == "run_trial":
                    bar.update(1)
                elif node == "aggregate":
                    summary = update["summary"]
    return summary


# ==========================================
# 3. Diagram export
# ==========================================

def write_graph_diagram(graph, path: Path) -> Path | None:
    """Save the Mermaid source of the compiled graph next to the results.

    Rendering to PNG needs a network service, so only the text is written; a failure here
    never aborts a run.
    """
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(graph.get_graph().draw_mermaid())
        logger.debug("--- [Graph] diagram saved to %s", path)
        return path
    except Exception as exc:
        logger.warning("--- [Graph] skipping diagram export: %s", exc)
        return None
