"""Built-in instruction and UI-element vocabularies."""

from __future__ import annotations

from functools import lru_cache

OPCODES = (
    "add", "sub", "mul", "div", "rem", "neg", "and", "or", "xor", "shl", "shr",
    "cmp", "assign", "new", "newarray", "load", "store", "getfield", "putfield",
    "cast", "instanceof", "throw", "monitor",
)

APIS = (
    "android.util.Log.d",
    "java.io.File.open",
    "java.net.URL.openConnection",
    "android.database.sqlite.SQLiteDatabase.query",
    "android.widget.TextView.setText",
    "java.util.List.add",
    "java.util.Map.get",
    "java.lang.StringBuilder.append",
    "android.content.Intent.init",
    "android.os.Handler.post",
    "java.lang.Thread.start",
    "android.graphics.BitmapFactory.decode",
    "android.media.MediaPlayer.start",
    "android.location.LocationManager.requestUpdates",
    "android.app.Activity.startActivity",
    "java.io.PrintStream.println",
)

UI_ELEMENTS = (
    "LinearLayout", "TextView", "RelativeLayout", "FrameLayout", "Button",
    "ImageView", "EditText", "ListView", "ScrollView", "CheckBox", "ProgressBar",
    "WebView", "Spinner", "Switch", "GridLayout", "TableLayout", "ImageButton",
    "RadioButton", "RadioGroup", "SeekBar", "RatingBar", "VideoView",
    "ToggleButton", "GridView",
)

LEGACY_PREFIXES = ("android.support.",)


@lru_cache(maxsize=None)
def default_vocabulary():
    from .ir import Vocabulary

    return Vocabulary.from_names(OPCODES + APIS)


@lru_cache(maxsize=None)
def default_ui_vocabulary():
    from .layout import UiVocabulary

    return UiVocabulary(UI_ELEMENTS)
