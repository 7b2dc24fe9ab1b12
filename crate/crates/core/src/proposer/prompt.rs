//! Prompt assembly from the versioned templates under `prompts/`.

use crate::grid::{Cell, Trajectory};

use super::{ActionKind, PlanningContext, ProposerAction};

pub const TEMPLATE_VERSION: u32 = 1;

pub const SYSTEM_PROMPT: &str = include_str!("../../prompts/system.txt");
const GENERATE: &str = include_str!("../../prompts/generate.txt");
const REGENERATE: &str = include_str!("../../prompts/regenerate.txt");
const FINETUNE: &str = include_str!("../../prompts/finetune.txt");
const EVALUATE: &str = include_str!("../../prompts/evaluate.txt");

const PATH_FORMAT: &str = "Answer with the complete path as a JSON array of [row, col] pairs that starts at the current position, for example [[0, 0], [0, 1], [1, 1]].";

fn cell_list(cells: impl IntoIterator<Item = Cell>) -> String {
    let items: Vec<String> = cells.into_iter().map(|c| format!("[{},{}]", c.row, c.col)).collect();
    if items.is_empty() {
        "none".to_string()
    } else {
        format!("[{}]", items.join(","))
    }
}

/// Wire form of a path: `[[r,c],[r,c],...]`.
pub fn serialize_trajectory(path: &Trajectory) -> String {
    let items: Vec<String> = path.iter().map(|c| format!("[{},{}]", c.row, c.col)).collect();
    format!("[{}]", items.join(","))
}

fn context_block(ctx: &PlanningContext<'_>) -> String {
    let map = ctx.map;
    let mut grid = String::new();
    for r in 0..map.height() as i32 {
        for c in 0..map.width() as i32 {
            let cell = Cell::new(r, c);
            grid.push(if cell == ctx.start {
                'V'
            } else if map.is_obstacle(cell) {
                '#'
            } else if ctx.coverage.count(cell) > 0 {
                'o'
            } else {
                '.'
            });
        }
        grid.push('\n');
    }
    format!(
        "Map: {w} columns x {h} rows. Cells are written [row, col]; row 0 is the top edge and col 0 the left edge.\n\
         Legend: # obstacle, . unvisited free cell, o visited cell, V vehicle\n\
         {grid}\
         Obstacles: {obstacles}\n\
         Visited cells: {visited}\n\
         Current position: [{sr},{sc}]\n\
         Operator instruction: {instruction}\n",
        w = map.width(),
        h = map.height(),
        obstacles = cell_list(map.obstacle_cells()),
        visited = cell_list(ctx.coverage.nonzero().map(|(c, _)| c)),
        sr = ctx.start.row,
        sc = ctx.start.col,
        instruction = ctx.instruction.text,
    )
}

/// Full user prompt for `action`. Deterministic in its inputs.
pub fn build_prompt(action: &ProposerAction, ctx: &PlanningContext<'_>) -> String {
    let template = match action.kind() {
        ActionKind::Generate => GENERATE,
        ActionKind::Regenerate => REGENERATE,
        ActionKind::Finetune => FINETUNE,
        ActionKind::Evaluate => EVALUATE,
    };
    let prior = action.prior().map(serialize_trajectory).unwrap_or_else(|| "none".to_string());
    let feedback = action.feedback().unwrap_or("none");
    template
        .replace("{context}", &context_block(ctx))
        .replace("{prior}", &prior)
        .replace("{feedback}", feedback)
        .replace("{path_format}", PATH_FORMAT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CoverageMap, GridMap};
    use crate::proposer::Instruction;

    fn fixture() -> (GridMap, CoverageMap, Instruction) {
        let map = GridMap::new(3, 3, [Cell::new(1, 1)], Cell::new(0, 0)).unwrap();
        let cov = CoverageMap::new(&map);
        (map, cov, Instruction::new("complete coverage", 0).unwrap())
    }

    #[test]
    fn generate_prompt_embeds_inputs() {
        let (map, cov, ins) = fixture();
        let ctx = PlanningContext { map: &map, coverage: &cov, instruction: &ins, start: Cell::new(0, 0) };
        let p = build_prompt(&ProposerAction::generate(), &ctx);
        assert!(p.contains("Map: 3 columns x 3 rows"));
        assert!(p.contains("Obstacles: [[1,1]]"));
        assert!(p.contains("Current position: [0,0]"));
        assert!(p.contains("Operator instruction: complete coverage"));
        assert!(p.contains("JSON array of [row, col] pairs"));
        assert!(p.contains("V..\n.#.\n...\n"));
        assert!(!p.contains('{'), "unfilled placeholder in:\n{p}");
    }

    #[test]
    fn regenerate_feedback_is_verbatim() {
        let (map, cov, ins) = fixture();
        let ctx = PlanningContext { map: &map, coverage: &cov, instruction: &ins, start: Cell::new(0, 0) };
        let fb = "Error: path enters no-fly zone at coordinates (1, 1)";
        let prior = Trajectory::new(vec![Cell::new(0, 1), Cell::new(1, 1)]);
        let p = build_prompt(&ProposerAction::regenerate(prior, fb), &ctx);
        assert!(p.contains(fb));
        assert!(p.contains("Previous path: [[0,1],[1,1]]"));
    }

    #[test]
    fn prompts_are_deterministic() {
        let (map, cov, ins) = fixture();
        let ctx = PlanningContext { map: &map, coverage: &cov, instruction: &ins, start: Cell::new(0, 0) };
        let prior = Trajectory::new(vec![Cell::new(0, 0)]);
        for action in [
            ProposerAction::generate(),
            ProposerAction::finetune(prior.clone()),
            ProposerAction::evaluate(prior.clone(), None),
        ] {
            assert_eq!(build_prompt(&action, &ctx), build_prompt(&action, &ctx));
        }
    }

    #[test]
    fn templates_carry_version_header() {
        for t in [GENERATE, REGENERATE, FINETUNE, EVALUATE] {
            assert!(t.starts_with("# template: "));
            assert!(t.lines().next().unwrap().ends_with(&format!("v{TEMPLATE_VERSION}")));
        }
    }
}
