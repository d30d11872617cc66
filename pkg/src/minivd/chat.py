"""Interactive question loop against one dialogue's scene."""

from .tensor import no_grad
from .text import UNK, decode, encode

HELP = (
    "directives: :quit exits, :reset clears the running history; "
    "anything else is asked as a question"
)


def answer_question(model, vocab, text_config, instance, history, question):
    """Greedy answer for a question given the running (q, a) id history."""
    q_ids = encode(question, vocab, text_config.question_len).ids or (UNK,)
    caption_ids = encode(instance.caption, vocab, text_config.caption_len).ids or (UNK,)
    with no_grad():
        emb, _ = model.encode_round(
            instance.features, caption_ids, tuple(history), q_ids
        )
        token_ids = model.decoder.generate(emb, max_len=text_config.answer_len)
    return q_ids, tuple(token_ids), decode(token_ids, vocab)


def chat_loop(model, vocab, text_config, instance, input_fn=None, output_fn=print):
    """Read questions, print generated answers; returns the exit code.

    `:reset` clears the history, `:quit` leaves the loop; empty lines
    reprompt without touching the dialogue state.
    """
    if input_fn is None:
        input_fn = input
    history = []
    output_fn(f"chatting about dialogue {instance.dialogue_id}: {instance.caption}")
    output_fn(HELP)
    while True:
        try:
            line = input_fn("> ")
        except EOFError:
            return 0
        line = line.strip()
        if not line:
            continue
        if line.startswith(":"):
            if line == ":quit":
                return 0
            if line == ":reset":
                history.clear()
                output_fn("history cleared")
                continue
            output_fn(HELP)
            continue
        q_ids, a_ids, answer = answer_question(
            model, vocab, text_config, instance, history, line
        )
        output_fn(answer if answer else "(empty answer)")
        history.append((q_ids, a_ids if a_ids else (UNK,)))
