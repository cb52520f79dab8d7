//! CSV views of budget allocations and curriculum schedules.

use std::io::Write;

use crate::{invalid, CurriculumTask, Result, StrategyError};

fn csv_err(e: impl std::fmt::Display) -> StrategyError {
    StrategyError::Csv(e.to_string())
}

/// Columns: `task_id,value,rollouts`.
pub fn write_allocation_csv<W: Write>(out: W, task_ids: &[String], values: &[f64], alloc: &[u32]) -> Result<()> {
    if task_ids.len() != values.len() || values.len() != alloc.len() {
        return invalid("allocation columns differ in length");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_id", "value", "rollouts"]).map_err(csv_err)?;
    for ((id, v), n) in task_ids.iter().zip(values).zip(alloc) {
        w.write_record([id.clone(), v.to_string(), n.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Columns: `position,task,tier,difficulty`, one row per scheduled task.
pub fn write_schedule_csv<W: Write>(out: W, tasks: &[CurriculumTask], order: &[usize]) -> Result<()> {
    if order.iter().any(|&i| i >= tasks.len()) {
        return invalid("schedule refers to a missing task");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position", "task", "tier", "difficulty"]).map_err(csv_err)?;
    for (pos, &i) in order.iter().enumerate() {
        let t = &tasks[i];
        w.write_record([pos.to_string(), i.to_string(), t.tier.clone(), t.difficulty.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}
