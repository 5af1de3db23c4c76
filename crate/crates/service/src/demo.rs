//! A small ready-made study: two unconventional stimuli and two ranking
//! tasks.

use humankernel::experiments::occam::build_occam_task;
use humankernel::experiments::stimuli::StimulusGrid;
use humankernel::experiments::{make_sawtooth, make_step, OccamConfig, OccamTask};
use humankernel::responses::Stimulus;
use humankernel::seeds::derive_seed;
use humankernel::Result;

use crate::store::{StudyDefinition, StudyItem};

pub fn demo_study(seed: u64) -> Result<(StudyDefinition, Vec<Stimulus>, Vec<OccamTask>)> {
    let grid = StimulusGrid::default();
    let stimuli = vec![
        make_sawtooth("sawtooth", 2.0, 1.0, &grid)?,
        make_step("step", &[1.5, 3.0, 4.5, 6.5], &[0.0, 1.0, 0.0, 1.0, 0.0], &grid)?,
    ];
    let cfg = OccamConfig::default();
    let tasks = (0..2)
        .map(|i| build_occam_task(&cfg, &format!("occam-{i}"), derive_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let items = stimuli
        .iter()
        .map(|s| StudyItem::Stimulus { id: s.id.clone() })
        .chain(tasks.iter().map(|t| StudyItem::Ranking { id: t.id.clone() }))
        .collect();
    Ok((StudyDefinition { seed, items }, stimuli, tasks))
}
