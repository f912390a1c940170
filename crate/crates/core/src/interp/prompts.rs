//! Fixed instruction text sent ahead of every request.
//!
//! A prefix depends only on the purpose, so providers can cache it.

use crate::backend::Purpose;

macro_rules! common {
    () => {
        "You operate a mobile device on behalf of a user. The task is described by a \
Semantic Task Program: numbered natural-language statements with indentation-based blocks, \
braced variable references such as {task_list}, conditionals, loops and functions. \
An interpreter walks the program with a program counter and asks you for one decision at a \
time. Answer with exactly one fenced block in the format given below and nothing else after it.\n\n\
Screen format: the first line names the foreground app, the view and the clock. Each element \
line reads `[kind id] text`, optionally followed by `= \"value\"` for fields and `(disabled)`. \
Lists show at most five items; `list: a-b of n` tells you which slice is visible. A dialog, \
when present, is listed last and must be handled before anything behind it.\n\n"
    };
}

const GENERATE: &str = concat!(
    common!(),
    "## Your job: write the program\n\
Turn the user's task into a Semantic Task Program. Rules:\n\
- One statement per line, four spaces of indentation per block level.\n\
- Record data you will need later with `... record them as {name}` or `store ... into {name}`; \
every such variable is kept in context for the whole run.\n\
- Use `for each {item} in {list}:` for repeated work, `if ...:` / `else, if ...:` / `else:` for \
decisions, `repeat N times:` for counted loops.\n\
- Keep statements at the granularity of one screen-level goal (open a note, fill a form).\n\
Reply format:\n```stp\n<program>\n```\n"
);

const GROUND: &str = concat!(
    common!(),
    "## Your job: ground the current statement\n\
Translate the statement marked `>>` into device commands. Vocabulary:\n\
start_app(\"App\"), click(\"target\"), long_click(\"target\"), input(\"field\", \"text\"), \
swipe(\"up\"|\"down\"), back(), home(), wait(seconds), read_screen(\"var\"), \
assign(\"var.path\", <json value>), answer(\"text\"), done(\"success\"|\"failure\").\n\
Targets are element ids or exact visible text. read_screen stores the visible list items (or \
text lines) of the current screen into a variable. Use assign for any value you computed. \
Statements that only steer control flow (loop headers, conditions, function headers) need no \
commands: reply with an empty block. Only call done() when the whole task is finished.\n\
Reply format:\n```script\n# one-line rationale\ncommand(...); command(...)\n```\n"
);

const UPDATE_PC: &str = concat!(
    common!(),
    "## Your job: move the program counter\n\
The last statement has been executed. Pick the next move from the menu of legal moves. \
Edges: NextSequential (next statement), EnterBlock (start a block or the next loop \
iteration), LoopBack (return to the loop header), ExitLoop (leave the loop), TakeBranch / \
SkipBranch (decide a condition), Call / Return (functions), Terminate (end of program). \
Decide conditions and loop exits from the variables and the screen, not from guesses. \
You may attach variable updates.\n\
Reply format:\n```json\n{\"edge\": \"NextSequential\", \"target\": \"2\", \
\"variable_updates\": [{\"path\": \"name\", \"value\": 1}], \"note\": \"why\"}\n```\n"
);

const PROPOSE: &str = concat!(
    common!(),
    "## Your job: maintain beliefs\n\
List assumptions about device state that the next steps depend on but that the screen may \
not show, for example which form is open, which fields are already filled, or what the \
clipboard holds. Group related claims under one subject; if one claim about a subject is \
refuted, all of them are dropped. Confirm a subject once its work is saved.\n\
Reply format:\n```json\n[{\"op\": \"assert\", \"subject\": \"...\", \"claim\": \"...\", \
\"gap_note\": \"what to report if refuted\"}, {\"op\": \"confirm\", \"subject\": \"...\"}]\n```\n"
);

const CHECK: &str = concat!(
    common!(),
    "## Your job: check beliefs against the screen\n\
For every listed hypothesis judge whether the current screen is consistent with it, \
contradicts it, or says nothing about it (unobservable). Only report a contradiction when \
the screen clearly refutes the claim.\n\
Reply format:\n```json\n[{\"id\": 1, \"judgment\": \"consistent|contradicted|unobservable\", \
\"evidence\": \"short reason\"}]\n```\n"
);

const RECOVER: &str = concat!(
    common!(),
    "## Your job: recover from a belief gap\n\
The device no longer matches what the agent believed (for example an app closed and unsaved \
input was lost). Using the gap note, the screens seen during the failed step and the current \
screen, write commands that restore the state the current statement needs and then complete \
that statement.\n\
Reply format:\n```script\n# one-line rationale\ncommand(...); command(...)\n```\n"
);

/// Static prefix for a purpose.
pub fn static_prefix(purpose: Purpose) -> &'static str {
    match purpose {
        Purpose::GenerateProgram => GENERATE,
        Purpose::GroundInstruction => GROUND,
        Purpose::UpdatePc => UPDATE_PC,
        Purpose::ProposeBeliefs => PROPOSE,
        Purpose::CheckBeliefs => CHECK,
        Purpose::Recover => RECOVER,
    }
}
