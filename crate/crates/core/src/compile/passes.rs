use super::kernel::{Instr, KernelProgram};

/// Evaluates instructions whose operands are all constant and resolves
/// branches and selects with constant guards.
pub(crate) fn constant_fold(k: &mut KernelProgram) {
    let n = k.slot_count as usize;
    let mut known: Vec<Option<f64>> = vec![None; n];
    let mut alias: Vec<u32> = (0..k.slot_count).collect();
    let mut code: Vec<Option<Instr>> = Vec::with_capacity(k.instructions.len());
    for ins in &k.instructions {
        let mut ins = *ins;
        ins.map_operands(|s| alias[s as usize]);
        let c = |s: u32| known[s as usize];
        let folded = match ins {
            Instr::Const { dest, value } => {
                known[dest as usize] = Some(value);
                Some(ins)
            }
            Instr::Unary { dest, op, arg } => match c(arg).map(|a| op.apply(a)) {
                Some(Ok(value)) => {
                    known[dest as usize] = Some(value);
                    Some(Instr::Const { dest, value })
                }
                _ => Some(ins),
            },
            Instr::Binary { dest, op, lhs, rhs } => match c(lhs).zip(c(rhs)).map(|(a, b)| op.apply(a, b)) {
                Some(Ok(value)) => {
                    known[dest as usize] = Some(value);
                    Some(Instr::Const { dest, value })
                }
                _ => Some(ins),
            },
            Instr::Branch { guard, when, target } => match c(guard.lhs).zip(c(guard.rhs)) {
                Some((a, b)) if guard.rel.holds(a, b) == when => Some(Instr::Jump { target }),
                Some(_) => None,
                None => Some(ins),
            },
            Instr::Select { dest, guard, then, otherwise } => match c(guard.lhs).zip(c(guard.rhs)) {
                Some((a, b)) => {
                    let src = if guard.rel.holds(a, b) { then } else { otherwise };
                    alias[dest as usize] = src;
                    known[dest as usize] = known[src as usize];
                    None
                }
                None => Some(ins),
            },
            Instr::Input { .. } | Instr::Jump { .. } => Some(ins),
        };
        code.push(folded);
    }
    for (_, slot) in &mut k.outputs {
        *slot = alias[*slot as usize];
    }
    k.instructions = compact(code);
    renumber(k);
}

/// Removes unreachable code, instructions whose results are never read,
/// and jumps to the next instruction, then renumbers slots densely.
pub(crate) fn dead_code(k: &mut KernelProgram) {
    loop {
        let before = k.instructions.len();
        remove_unreachable(k);
        remove_dead_values(k);
        remove_trivial_jumps(k);
        if k.instructions.len() == before {
            break;
        }
    }
    renumber(k);
}

fn remove_unreachable(k: &mut KernelProgram) {
    let n = k.instructions.len();
    let mut reach = vec![false; n + 1];
    if n > 0 {
        reach[0] = true;
    }
    for pc in 0..n {
        if !reach[pc] {
            continue;
        }
        let ins = &k.instructions[pc];
        if let Some(t) = ins.target() {
            reach[t as usize] = true;
        }
        if !matches!(ins, Instr::Jump { .. }) {
            reach[pc + 1] = true;
        }
    }
    let code = k.instructions.iter().zip(&reach).map(|(i, r)| r.then_some(*i)).collect();
    k.instructions = compact(code);
}

fn remove_dead_values(k: &mut KernelProgram) {
    let mut live = vec![false; k.slot_count as usize];
    for (_, s) in &k.outputs {
        live[*s as usize] = true;
    }
    let mut code: Vec<Option<Instr>> = k.instructions.iter().map(|i| Some(*i)).collect();
    for entry in code.iter_mut().rev() {
        let ins = entry.expect("filled");
        if let Some(d) = ins.dest() {
            if !live[d as usize] {
                *entry = None;
                continue;
            }
        }
        for s in ins.operands() {
            live[s as usize] = true;
        }
    }
    k.instructions = compact(code);
}

fn remove_trivial_jumps(k: &mut KernelProgram) {
    let code = k
        .instructions
        .iter()
        .enumerate()
        .map(|(pc, i)| match i.target() {
            Some(t) if t as usize == pc + 1 => None,
            _ => Some(*i),
        })
        .collect();
    k.instructions = compact(code);
}

/// Drops `None` entries and remaps jump targets to the first surviving
/// instruction at or after the old target.
fn compact(code: Vec<Option<Instr>>) -> Vec<Instr> {
    let mut new_pc = Vec::with_capacity(code.len() + 1);
    let mut kept = 0u32;
    for i in &code {
        new_pc.push(kept);
        kept += i.is_some() as u32;
    }
    new_pc.push(kept);
    code.into_iter()
        .flatten()
        .map(|mut i| {
            if let Instr::Branch { target, .. } | Instr::Jump { target } = &mut i {
                *target = new_pc[*target as usize];
            }
            i
        })
        .collect()
}

/// Renumbers slots in order of definition.
fn renumber(k: &mut KernelProgram) {
    let mut map = vec![u32::MAX; k.slot_count as usize];
    let mut next = 0;
    for ins in &k.instructions {
        if let Some(d) = ins.dest() {
            map[d as usize] = next;
            next += 1;
        }
    }
    for ins in &mut k.instructions {
        ins.map_slots(|s| map[s as usize]);
    }
    for (_, s) in &mut k.outputs {
        *s = map[*s as usize];
    }
    k.slot_count = next;
}
