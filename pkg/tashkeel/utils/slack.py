import json
import requests

from .log import get_logger


log = get_logger("tashkeel")


def format_message(
    command, run, completed=True, summary=None, error=None
) -> str:
    """
    Format Slack message to send on a training run finishing or failing

    Parameters
    ----------
    command : str
        CLI command that was run
    run : str
        run directory or output the command wrote to
    completed : bool
        True if the command finished, False if it failed
    summary : dict | None
        key metrics of a completed run (e.g. best validation DER)
    error : str | None
        error message of a failed run

    Returns
    -------
    str
        formatted message for posting to Slack
    """
    if completed:
        message = f":white_check_mark: Tashkeel: {command} completed for {run}"

        if summary:
            message += "".join(
                f"\n\t:black_square: {key}: {value}"
                for key, value in summary.items()
            )
    else:
        message = f":x: Tashkeel: {command} failed for {run}"

        if error:
            message += f"\n\t:black_square: {error}"

    return message


def post_message(url, message) -> None:
    """
    Post message to provided webhook URL, used for posting messages to
    specific Slack channel

    Parameters
    ----------
    url : str
        endpoint to post message to
    message : str
        message to post to Slack
    """
    log.info("Posting message to Slack")
    try:
        response = requests.post(
            url=url,
            data=json.dumps({"text": message}),
            headers={"content-type": "application/json"},
            timeout=30,
        )

        if not response.status_code == 200:
            log.error(
                "Error in post request to Slack (%s): %s",
                response.status_code,
                response.text,
            )
    except requests.exceptions.RequestException as error:
        log.error("Error in post request to Slack: %s", error)


def notify(
    config, command, run, completed=True, summary=None, error=None
) -> None:
    """
    Post the run outcome to the configured webhooks, completed runs to the
    log channel and failures to the alert channel, each falling back to
    the other

    Parameters
    ----------
    config : dict
        resolved run config
    command : str
        CLI command that was run
    run : str
        run directory or output
    completed : bool
        outcome of the run
    summary : dict | None
        key metrics of a completed run
    error : str | None
        error message of a failed run
    """
    log_url = config.get("slack_log_webhook") or config.get(
        "slack_alert_webhook"
    )
    alert_url = config.get("slack_alert_webhook") or config.get(
        "slack_log_webhook"
    )
    url = log_url if completed else alert_url

    if not url:
        log.debug(
            "Neither `slack_log_webhook` or `slack_alert_webhook` specified =>"
            " no Slack notifications to send"
        )
        return

    post_message(
        url=url,
        message=format_message(
            command, run, completed=completed, summary=summary, error=error
        ),
    )
